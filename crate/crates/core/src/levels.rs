//! The consistency levels, their defining constraints, the implication
//! hierarchy between them and their availability upper bounds.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::constraints::{Convergence, Relationship, SessionGuarantee, StalenessBound};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConsistencyLevel {
    Linearizability,
    RegularSequential,
    Sequential,
    BoundedStaleness(StalenessBound),
    RealTimeCausal,
    CausalPlus,
    Causal,
    Pram,
    PerKeySequential,
    Eventual,
    Weak,
}

/// Most to least available.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum AvailabilityBound {
    WeaklyAvailable,
    StickyAvailable,
    TotallyAvailable,
}

impl fmt::Display for AvailabilityBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AvailabilityBound::TotallyAvailable => "Totally available",
            AvailabilityBound::StickyAvailable => "Sticky available",
            AvailabilityBound::WeaklyAvailable => "Weakly available",
        })
    }
}

/// Bound used for `bounded-staleness` when none is given: a write must be
/// visible once one newer update to its key has been acknowledged.
pub const DEFAULT_STALENESS: StalenessBound = StalenessBound {
    max_writer_ops: None,
    max_key_updates: Some(1),
    max_delay: None,
};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("unknown level {name:?}; valid levels: {}", ConsistencyLevel::NAMES.join(", "))]
pub struct UnknownLevel {
    pub name: String,
}

impl ConsistencyLevel {
    /// Every level in declaration order.
    pub fn all(bound: StalenessBound) -> [ConsistencyLevel; 11] {
        use ConsistencyLevel::*;
        [
            Linearizability,
            RegularSequential,
            Sequential,
            BoundedStaleness(bound),
            RealTimeCausal,
            CausalPlus,
            Causal,
            Pram,
            PerKeySequential,
            Eventual,
            Weak,
        ]
    }

    /// The levels checked when none are requested.
    pub const COMMON: [ConsistencyLevel; 4] = [
        ConsistencyLevel::Linearizability,
        ConsistencyLevel::Sequential,
        ConsistencyLevel::CausalPlus,
        ConsistencyLevel::Eventual,
    ];

    pub const NAMES: [&'static str; 11] = [
        "linearizable",
        "regular-sequential",
        "sequential",
        "bounded-staleness",
        "real-time-causal",
        "causal+",
        "causal",
        "pram",
        "per-key-sequential",
        "eventual",
        "weak",
    ];

    /// Position in declaration order.
    pub fn rank(&self) -> usize {
        use ConsistencyLevel::*;
        match self {
            Linearizability => 0,
            RegularSequential => 1,
            Sequential => 2,
            BoundedStaleness(_) => 3,
            RealTimeCausal => 4,
            CausalPlus => 5,
            Causal => 6,
            Pram => 7,
            PerKeySequential => 8,
            Eventual => 9,
            Weak => 10,
        }
    }

    /// Short machine name, as accepted on the command line.
    pub fn name(&self) -> &'static str {
        Self::NAMES[self.rank()]
    }

    pub fn parse(name: &str, bound: StalenessBound) -> Result<Self, UnknownLevel> {
        let rank = Self::NAMES
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| UnknownLevel { name: name.into() })?;
        Ok(Self::all(bound)[rank])
    }

    pub fn title(&self) -> &'static str {
        use ConsistencyLevel::*;
        match self {
            Linearizability => "Linearizability",
            RegularSequential => "Regular Sequential",
            Sequential => "Sequential",
            BoundedStaleness(_) => "Bounded Staleness",
            RealTimeCausal => "Real-time Causal",
            CausalPlus => "Causal+",
            Causal => "Causal",
            Pram => "PRAM",
            PerKeySequential => "Per-key Sequential",
            Eventual => "Eventual",
            Weak => "Weak",
        }
    }
}

impl fmt::Display for ConsistencyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn constraints_of(level: ConsistencyLevel) -> (Convergence, Relationship) {
    use ConsistencyLevel::*;
    use Convergence::*;
    match level {
        Linearizability => (So, Relationship::Rt),
        RegularSequential => (So, Relationship::RtwCaslr),
        Sequential => (So, Relationship::Casl),
        BoundedStaleness(bound) => (Npo, Relationship::BoundedCasl(bound)),
        RealTimeCausal => (Cpo, Relationship::RtPrimeCasl),
        CausalPlus => (Cpo, Relationship::Casl),
        Causal => (Npo, Relationship::Casl),
        Pram => (Npo, Relationship::Fifo),
        PerKeySequential => (Cpo, Relationship::CaslPerKey),
        Eventual => (Cpo, Relationship::None),
        Weak => (Npo, Relationship::None),
    }
}

/// Every history conforming to `a` conforms to `b`, as derived from the
/// constraint lattice.
pub fn implies(a: ConsistencyLevel, b: ConsistencyLevel) -> bool {
    let (ca, ra) = constraints_of(a);
    let (cb, rb) = constraints_of(b);
    ca.at_least(cb) && ra.at_least(&rb, ca)
}

pub fn availability_upper_bound(level: ConsistencyLevel) -> AvailabilityBound {
    use AvailabilityBound::*;
    use ConsistencyLevel::*;
    match level {
        Linearizability | RegularSequential | Sequential | BoundedStaleness(_) => WeaklyAvailable,
        RealTimeCausal | CausalPlus | Causal | Pram | PerKeySequential => StickyAvailable,
        Eventual | Weak => TotallyAvailable,
    }
}

/// Reading one's own writes needs the client to stick to a replica; the
/// other guarantees hold against any live replica.
pub fn session_availability(guarantee: SessionGuarantee) -> AvailabilityBound {
    match guarantee {
        SessionGuarantee::ReadMyWrites => AvailabilityBound::StickyAvailable,
        _ => AvailabilityBound::TotallyAvailable,
    }
}

/// Levels ordered so that every level comes before all levels it implies;
/// ties keep declaration order.
pub fn strongest_first(levels: &[ConsistencyLevel]) -> Vec<ConsistencyLevel> {
    let mut remaining: Vec<ConsistencyLevel> = levels.to_vec();
    remaining.sort_by_key(|l| l.rank());
    remaining.dedup();
    let mut order = Vec::with_capacity(remaining.len());
    while !remaining.is_empty() {
        let next = remaining
            .iter()
            .position(|&l| {
                !remaining
                    .iter()
                    .any(|&m| m != l && implies(m, l) && !implies(l, m))
            })
            .expect("implication is a partial order");
        order.push(remaining.remove(next));
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use ConsistencyLevel::*;

    fn all() -> [ConsistencyLevel; 11] {
        ConsistencyLevel::all(DEFAULT_STALENESS)
    }

    #[test]
    fn constraint_rows() {
        assert_eq!(constraints_of(Linearizability), (Convergence::So, Relationship::Rt));
        assert_eq!(constraints_of(Eventual), (Convergence::Cpo, Relationship::None));
        assert_eq!(constraints_of(Pram), (Convergence::Npo, Relationship::Fifo));
    }

    #[test]
    fn hierarchy_examples() {
        let bs = BoundedStaleness(DEFAULT_STALENESS);
        assert!(implies(Linearizability, Sequential));
        assert!(!implies(Sequential, bs));
        assert!(!implies(bs, Sequential));
        assert!(implies(CausalPlus, Causal) && implies(Causal, Pram));
        assert!(!implies(PerKeySequential, Sequential));
        assert!(implies(Sequential, PerKeySequential));
        assert!(!implies(CausalPlus, PerKeySequential));
        assert!(!implies(RegularSequential, RealTimeCausal));
        assert!(!implies(RealTimeCausal, bs));
        assert!(implies(Weak, Weak));
        for l in all() {
            assert!(implies(Linearizability, l));
            assert!(implies(l, Weak));
            assert!(implies(l, l));
        }
    }

    #[test]
    fn per_key_sequential_implies_only_eventual_and_weak() {
        let implied: Vec<_> = all()
            .into_iter()
            .filter(|&l| l != PerKeySequential && implies(PerKeySequential, l))
            .collect();
        assert_eq!(implied, vec![Eventual, Weak]);
    }

    #[test]
    fn implication_is_a_partial_order() {
        for a in all() {
            for b in all() {
                if a != b {
                    assert!(!(implies(a, b) && implies(b, a)), "{a} <=> {b}");
                }
                for c in all() {
                    if implies(a, b) && implies(b, c) {
                        assert!(implies(a, c), "{a} => {b} => {c}");
                    }
                }
            }
        }
    }

    #[test]
    fn common_levels_form_a_chain() {
        let chain = [Linearizability, Sequential, CausalPlus, Eventual, Weak];
        for (i, &a) in chain.iter().enumerate() {
            for &b in &chain[i..] {
                assert!(implies(a, b));
            }
        }
    }

    #[test]
    fn availability_is_monotone() {
        for a in all() {
            for b in all() {
                if implies(a, b) {
                    assert!(availability_upper_bound(a) <= availability_upper_bound(b));
                }
            }
        }
    }

    #[test]
    fn bounded_staleness_family() {
        let k1 = BoundedStaleness(DEFAULT_STALENESS);
        let k2 = BoundedStaleness(StalenessBound {
            max_key_updates: Some(2),
            ..Default::default()
        });
        assert!(implies(k1, k2));
        assert!(!implies(k2, k1));
    }

    #[test]
    fn names_round_trip() {
        for l in all() {
            assert_eq!(ConsistencyLevel::parse(l.name(), DEFAULT_STALENESS), Ok(l));
        }
        let err = ConsistencyLevel::parse("bogus", DEFAULT_STALENESS).unwrap_err();
        assert!(err.to_string().contains("linearizable, regular-sequential"));
    }

    #[test]
    fn strongest_first_respects_implication() {
        let order = strongest_first(&[Weak, Eventual, Sequential, Linearizability, PerKeySequential]);
        assert_eq!(
            order,
            vec![Linearizability, Sequential, PerKeySequential, Eventual, Weak]
        );
    }
}
