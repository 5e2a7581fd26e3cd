//! Synchrony schedules and the x-partial-synchrony conformance check.
//!
//! The adversary picks a synchrony flag for each round. The network budget
//! says: partition the execution into periods of Δ′ rounds at any alignment,
//! slide a window of g consecutive periods over it, and in every window at
//! least a (1−x) fraction of the periods must be fully synchronous. The
//! validator here checks exactly that, over every alignment offset, and is
//! run post-hoc on every recorded schedule that declares conformance.

use num_traits::One;
use serde::{Deserialize, Serialize};

use crate::ids::Round;
use crate::Frac;

/// Network-model parameters: base delay Δ, period length Δ′, window length in
/// periods, and the asynchrony budget x.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NetParams {
    pub delta: u64,
    pub delta_prime: u64,
    pub g: u64,
    #[serde(with = "crate::fracfmt")]
    pub x: Frac,
}

impl NetParams {
    /// The induced worst-case delay bound Δ* = Δ′·g: a message can sit frozen
    /// for at most the asynchronous part of one window.
    pub fn delay_upper_bound(&self) -> u64 {
        self.delta_prime * self.g
    }

    pub fn check(&self) -> Result<(), String> {
        if self.delta < 1 || self.delta_prime < 1 || self.g < 1 {
            return Err("delta, delta_prime and g must all be at least 1".into());
        }
        if self.x < Frac::new(0, 1) || self.x > Frac::one() {
            return Err(format!("x = {} outside [0, 1]", self.x));
        }
        Ok(())
    }
}

/// Verdict of the conformance scan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Conformance {
    Ok,
    /// The schedule is shorter than one window at every alignment, so the
    /// quantifier is empty.
    OkVacuous,
    /// First failing window: `offset` is the partition alignment in rounds,
    /// `window_start` the first round of the window.
    Violation { offset: u64, window_start: Round },
}

impl Conformance {
    pub fn is_ok(&self) -> bool {
        matches!(self, Conformance::Ok | Conformance::OkVacuous)
    }
}

/// Periods needed fully-synchronous per window: ⌈(1−x)·g⌉, in exact
/// arithmetic.
pub fn sync_quota(g: u64, x: Frac) -> u64 {
    let q = (Frac::one() - x) * Frac::new(g as i64, 1);
    q.ceil().to_integer() as u64
}

/// Scan every alignment offset and every fully-contained window of g
/// consecutive Δ′-periods; report the first window under quota, scanning
/// offsets outermost and windows in round order.
pub fn validate_x_psync(flags: &[bool], delta_prime: u64, g: u64, x: Frac) -> Conformance {
    assert!(delta_prime >= 1 && g >= 1);
    let quota = sync_quota(g, x);
    let dp = delta_prime as usize;
    let gp = g as usize;
    let n = flags.len();

    // prefix[i] = number of sync rounds in flags[..i]; a period is fully
    // synchronous iff its prefix difference equals Δ′.
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0u64);
    for &f in flags {
        prefix.push(prefix.last().unwrap() + u64::from(f));
    }
    let all_sync =
        |start: usize| -> bool { prefix[start + dp] - prefix[start] == delta_prime };

    let mut any_window = false;
    for s in 0..dp.min(n.max(1)) {
        // Complete periods at this alignment: [s + j·Δ′, s + (j+1)·Δ′).
        let periods = n.saturating_sub(s) / dp;
        if periods < gp {
            continue;
        }
        let mut in_window = 0u64;
        for j in 0..periods {
            if all_sync(s + j * dp) {
                in_window += 1;
            }
            if j + 1 >= gp {
                if j + 1 > gp && all_sync(s + (j - gp) * dp) {
                    in_window -= 1;
                }
                any_window = true;
                if in_window < quota {
                    let w = j + 1 - gp;
                    return Conformance::Violation {
                        offset: s as u64,
                        window_start: (s + w * dp) as Round,
                    };
                }
            }
        }
    }
    if any_window {
        Conformance::Ok
    } else {
        Conformance::OkVacuous
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct re-derivation of the definition with plain loops, no prefix
    /// sums: the oracle the fast scan is checked against.
    fn brute_force(flags: &[bool], dp: u64, g: u64, x: Frac) -> Conformance {
        let quota = sync_quota(g, x);
        let mut any = false;
        for s in 0..dp as usize {
            let mut w = s;
            while w + (dp * g) as usize <= flags.len() {
                any = true;
                let mut ok_periods = 0;
                for j in 0..g as usize {
                    let p = &flags[w + j * dp as usize..w + (j + 1) * dp as usize];
                    if p.iter().all(|&f| f) {
                        ok_periods += 1;
                    }
                }
                if ok_periods < quota {
                    return Conformance::Violation { offset: s as u64, window_start: w as u64 };
                }
                w += dp as usize;
            }
        }
        if any {
            Conformance::Ok
        } else {
            Conformance::OkVacuous
        }
    }

    #[test]
    fn fast_scan_agrees_with_brute_force_on_random_schedules() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..300 {
            let dp = rng.gen_range(1..=6);
            let g = rng.gen_range(1..=5);
            let len = rng.gen_range(0..=60);
            let x = Frac::new(rng.gen_range(0..=4), 4);
            let flags: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.7)).collect();
            let fast = validate_x_psync(&flags, dp, g, x);
            let slow = brute_force(&flags, dp, g, x);
            assert_eq!(fast, slow, "case {case}: dp={dp} g={g} x={x} flags={flags:?}");
        }
    }

    #[test]
    fn x_one_never_violates() {
        let flags = vec![false; 100];
        assert_eq!(validate_x_psync(&flags, 10, 4, Frac::one()), Conformance::Ok);
    }

    #[test]
    fn x_zero_flags_a_single_async_round() {
        let mut flags = vec![true; 100];
        flags[37] = false;
        let v = validate_x_psync(&flags, 10, 4, Frac::new(0, 1));
        assert!(matches!(v, Conformance::Violation { .. }), "got {v:?}");
        assert_eq!(validate_x_psync(&vec![true; 100], 10, 4, Frac::new(0, 1)), Conformance::Ok);
    }

    /// Alternating async/sync periods with x = 1/2. At alignment 0 every
    /// window holds exactly 2 fully-synchronous periods of 4, meeting the
    /// quota on the nose. At any shifted alignment every period mixes sync
    /// and async rounds, so the scan over all alignments reports a
    /// violation; the first is at offset 1.
    #[test]
    fn alternating_periods_meet_quota_only_at_alignment_zero() {
        let dp = 10u64;
        let g = 4u64;
        let x = Frac::new(1, 2);
        let flags: Vec<bool> = (0..80).map(|r| (r / dp) % 2 == 1).collect();

        // The aligned partition: exactly 2 of 4 per window.
        let quota = sync_quota(g, x);
        assert_eq!(quota, 2);
        for w in 0..=4 {
            let sync_periods = (0..4)
                .filter(|j| {
                    flags[(w + j) * dp as usize..(w + j + 1) * dp as usize].iter().all(|&f| f)
                })
                .count();
            assert_eq!(sync_periods, 2, "window starting at period {w}");
        }

        // The full quantifier over alignments is stricter.
        assert_eq!(
            validate_x_psync(&flags, dp, g, x),
            Conformance::Violation { offset: 1, window_start: 1 }
        );
    }

    #[test]
    fn short_schedules_are_vacuous() {
        let flags = vec![false; 39];
        assert_eq!(validate_x_psync(&flags, 10, 4, Frac::new(0, 1)), Conformance::OkVacuous);
        assert_eq!(validate_x_psync(&[], 10, 4, Frac::new(0, 1)), Conformance::OkVacuous);
    }

    #[test]
    fn quota_is_exact_ceiling() {
        assert_eq!(sync_quota(4, Frac::new(1, 2)), 2);
        assert_eq!(sync_quota(3, Frac::new(1, 3)), 2);
        assert_eq!(sync_quota(5, Frac::new(1, 3)), 4); // ⌈10/3⌉
        assert_eq!(sync_quota(7, Frac::new(0, 1)), 7);
        assert_eq!(sync_quota(7, Frac::one()), 0);
    }
}
