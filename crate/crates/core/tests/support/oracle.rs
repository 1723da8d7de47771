//! Brute-force verdict interpreter. Legitimacy is evaluated as a point
//! predicate `in_lp(k, t)` straight from the revocation rules, with no
//! intervals and no shared code with the library.

#![allow(dead_code)]

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Own,
    /// Signed by the ancestor this many levels up.
    Parent(usize),
    Rk,
    Vendor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rev {
    pub target: usize,
    pub class: Class,
    /// Cutoff for CA revocations; `None` for leaf revocations.
    pub rev_ts: Option<u64>,
    pub reg_ts: u64,
}

/// One chain, root first; the last certificate is the leaf.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Model {
    pub tx: Vec<u64>,
    pub not_before: Vec<u64>,
    pub not_after: Vec<u64>,
    pub revs: Vec<Rev>,
    pub now: u64,
    pub root_ts: u64,
    pub max_root_age: u64,
}

impl Model {
    fn leaf(&self) -> usize {
        self.tx.len() - 1
    }

    fn applicable(&self, r: &Rev) -> bool {
        match r.class {
            Class::Parent(d) => d >= 1 && d <= r.target && self.in_lp(r.target - d, r.reg_ts),
            _ => true,
        }
    }

    fn cut(&self, k: usize, t: u64) -> bool {
        let applicable: Vec<&Rev> = self.revs.iter().filter(|r| r.target == k && self.applicable(r)).collect();
        if k == self.leaf() {
            return applicable.iter().any(|r| r.reg_ts <= t);
        }
        let tiers: [fn(Class) -> bool; 3] = [
            |c| c == Class::Vendor,
            |c| c == Class::Rk,
            |c| matches!(c, Class::Parent(_)),
        ];
        for tier in tiers {
            let members: Vec<&&Rev> = applicable.iter().filter(|r| tier(r.class)).collect();
            if !members.is_empty() {
                return members.iter().any(|r| r.rev_ts.unwrap() <= t);
            }
        }
        false
    }

    pub fn in_lp(&self, k: usize, t: u64) -> bool {
        self.tx[k] <= t && t < self.not_after[k] && !self.cut(k, t)
    }

    /// `None` on success, otherwise the failure reason's name.
    pub fn verdict(&self) -> Option<&'static str> {
        let now = self.now;
        let leaf = self.leaf();
        if (0..=leaf).any(|k| now < self.not_before[k] || now > self.not_after[k]) {
            return Some("PreValidateFail");
        }
        if now.saturating_sub(self.root_ts) > self.max_root_age {
            return Some("StaleRoot");
        }
        if (1..=leaf).any(|k| !self.in_lp(k - 1, self.tx[k])) {
            return Some("RegOutsideParentLP");
        }
        if self.in_lp(leaf, now) {
            return None;
        }
        let revoked = self
            .revs
            .iter()
            .any(|r| r.target == leaf && self.applicable(r) && r.reg_ts <= now && r.reg_ts < self.not_after[leaf]);
        Some(if revoked {
            "LeafRevoked"
        } else if now >= self.not_after[leaf] {
            "LeafExpired"
        } else {
            "EmptyLP"
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(revs: Vec<Rev>, now: u64) -> Model {
        Model {
            tx: vec![0, 100, 200],
            not_before: vec![0; 3],
            not_after: vec![1000; 3],
            revs,
            now,
            root_ts: now,
            max_root_age: 1000,
        }
    }

    #[test]
    fn rk_cutoff_before_registration_rejects_child() {
        let r = Rev { target: 1, class: Class::Rk, rev_ts: Some(150), reg_ts: 300 };
        assert_eq!(model(vec![r], 400).verdict(), Some("RegOutsideParentLP"));
    }

    #[test]
    fn vendor_restores_child_registered_before_its_cutoff() {
        let rk = Rev { target: 1, class: Class::Rk, rev_ts: Some(150), reg_ts: 300 };
        let v = Rev { target: 1, class: Class::Vendor, rev_ts: Some(250), reg_ts: 300 };
        assert_eq!(model(vec![rk, v], 240).verdict(), None);
    }
}
