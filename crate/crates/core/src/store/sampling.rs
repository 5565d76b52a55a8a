use rand::Rng;

use super::Episode;
use crate::error::{Error, Result};

/// Contiguous input block and target block cut from one episode.
#[derive(Clone, Copy, Debug)]
pub struct TrainingWindow<'a> {
    /// Index of the last input step.
    pub anchor: usize,
    pub states: &'a [Vec<f64>],
    pub actions: &'a [Vec<f64>],
    pub targets: &'a [Vec<f64>],
}

/// Samples `S = s[k-t_in..=k]`, `A = a[k-t_in..=k]`, `S' = s[k+1..=k+t_out]`
/// with the anchor `k` uniform over `[t_in, T-1-t_out]`.
pub fn sample_training_window<'a, R: Rng + ?Sized>(
    episode: &'a Episode,
    t_in: usize,
    t_out: usize,
    rng: &mut R,
) -> Result<TrainingWindow<'a>> {
    let len = episode.len();
    let required = t_in + t_out + 1;
    if t_out == 0 || len < required {
        return Err(Error::EpisodeTooShort {
            id: episode.id.clone(),
            length: len,
            required,
        });
    }
    let anchor = rng.random_range(t_in..=len - 1 - t_out);
    Ok(window_at(episode, anchor - t_in, anchor, t_out))
}

/// Samples a whole prefix `s[0..=k]` and its next `t_out` states, with `k`
/// uniform over `[0, min(T-1-t_out, max_len-1)]`.
pub fn sample_prefix_window<'a, R: Rng + ?Sized>(
    episode: &'a Episode,
    t_out: usize,
    max_len: usize,
    rng: &mut R,
) -> Result<TrainingWindow<'a>> {
    let len = episode.len();
    if t_out == 0 || len < t_out + 1 || max_len == 0 {
        return Err(Error::EpisodeTooShort {
            id: episode.id.clone(),
            length: len,
            required: t_out + 1,
        });
    }
    let last = (len - 1 - t_out).min(max_len - 1);
    let anchor = rng.random_range(0..=last);
    Ok(window_at(episode, 0, anchor, t_out))
}

fn window_at(episode: &Episode, start: usize, anchor: usize, t_out: usize) -> TrainingWindow<'_> {
    TrainingWindow {
        anchor,
        states: &episode.states[start..=anchor],
        actions: &episode.actions[start..=anchor],
        targets: &episode.states[anchor + 1..=anchor + t_out],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::store::test_support::ramp_episode;
    use proptest::prelude::*;

    #[test]
    fn single_step_window_shape() {
        let ep = ramp_episode("e", 10, 3, 2);
        let mut rng = seeded(11);
        let w = sample_training_window(&ep, 1, 1, &mut rng).unwrap();
        assert_eq!(w.states.len(), 2);
        assert_eq!(w.actions.len(), 2);
        assert_eq!(w.targets.len(), 1);
        assert_eq!(w.states[1], ep.states[w.anchor]);
        assert_eq!(w.targets[0], ep.states[w.anchor + 1]);

        let again = sample_training_window(&ep, 1, 1, &mut seeded(11)).unwrap();
        assert_eq!(again.anchor, w.anchor);
    }

    #[test]
    fn two_step_episode_is_too_short() {
        let ep = ramp_episode("tiny", 2, 3, 2);
        let err = sample_training_window(&ep, 1, 1, &mut seeded(0)).unwrap_err();
        assert!(matches!(err, Error::EpisodeTooShort { .. }));
        assert!(err.to_string().contains("tiny"));
        // three steps: anchor forced to 1
        let ep = ramp_episode("three", 3, 3, 2);
        let w = sample_training_window(&ep, 1, 1, &mut seeded(0)).unwrap();
        assert_eq!(w.anchor, 1);
    }

    #[test]
    fn anchor_distribution_is_uniform() {
        let ep = ramp_episode("long", 100, 1, 1);
        let (t_in, t_out) = (5, 3);
        let (lo, hi) = (t_in, 100 - 1 - t_out);
        let mut counts = vec![0usize; hi - lo + 1];
        let mut rng = seeded(2024);
        let n = 10_000;
        for _ in 0..n {
            let w = sample_training_window(&ep, t_in, t_out, &mut rng).unwrap();
            counts[w.anchor - lo] += 1;
        }
        let expected = n as f64 / counts.len() as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 91 degrees of freedom; 99.9th percentile of chi-square is about 135.8
        assert!(chi2 < 135.8, "chi2 = {chi2}");
    }

    #[test]
    fn prefix_window_starts_at_zero() {
        let ep = ramp_episode("p", 12, 2, 1);
        let mut rng = seeded(5);
        for _ in 0..200 {
            let w = sample_prefix_window(&ep, 1, 8, &mut rng).unwrap();
            assert!(w.anchor <= 7);
            assert_eq!(w.states.len(), w.anchor + 1);
            assert_eq!(w.targets[0], ep.states[w.anchor + 1]);
        }
        assert!(sample_prefix_window(&ramp_episode("one", 1, 2, 1), 1, 8, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn windows_stay_in_bounds(len in 1usize..40, t_in in 0usize..6, t_out in 1usize..6, seed: u64) {
            let ep = ramp_episode("f", len, 2, 1);
            let mut rng = seeded(seed);
            match sample_training_window(&ep, t_in, t_out, &mut rng) {
                Ok(w) => {
                    prop_assert!(len > t_in + t_out);
                    prop_assert!(w.anchor >= t_in && w.anchor + t_out < len);
                    prop_assert_eq!(w.states.len(), t_in + 1);
                    prop_assert_eq!(w.targets.len(), t_out);
                }
                Err(_) => prop_assert!(len <= t_in + t_out),
            }
        }
    }
}
