//! Evaluation-count accounting for the halving search versus an
//! evolutionary search of `T` iterations with population `P`.

/// `(d - 2) * C`: one evaluation per increment per segment.
pub fn search_budget(head_dim: u64, increments: u64) -> u64 {
    head_dim.saturating_sub(2) * increments
}

/// `T * P`.
pub fn evo_budget(iterations: u64, population: u64) -> u64 {
    iterations * population
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reported_counts() {
        assert_eq!(search_budget(128, 10), 1260);
        assert_eq!(evo_budget(40, 64), 2560);
        assert_eq!(search_budget(16, 10), 140);
        let ratio = evo_budget(40, 64) as f64 / search_budget(128, 10) as f64;
        assert!((ratio - 2.03).abs() < 0.005);
    }

    #[test]
    fn matches_schedule() {
        for f in [2u64, 8, 64] {
            let segs = super::super::segment_schedule(f as usize)
                .unwrap()
                .num_segments() as u64;
            assert_eq!(search_budget(2 * f, 7), segs * 7);
        }
    }
}
