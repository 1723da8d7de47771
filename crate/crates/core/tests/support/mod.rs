pub mod forest;
pub mod mth;
pub mod oracle;
pub mod scenario;
pub mod suites;
