use super::config::AttentionMode;
use super::grid::MomentGrid;
use crate::error::{Error, Result};

/// `(I K) x (I K)` decoder self-attention mask over states flattened as
/// `i * K + k`. `path` holds the selected state of each earlier token and is
/// required (for rows `< I - 1`) in `Selected` mode.
pub fn self_attention_mask(grid: &MomentGrid, mode: AttentionMode, path: Option<&[usize]>) -> Result<Vec<bool>> {
    let (rows, states) = (grid.rows(), grid.states());
    let n = rows * states;
    if mode == AttentionMode::Selected {
        let have = path.map_or(0, <[usize]>::len);
        if have + 1 < rows {
            return Err(Error::contract(format!(
                "selected attention over {rows} target rows needs {} earlier selections, got {have}",
                rows - 1
            )));
        }
        if let Some(p) = path {
            if let Some(&bad) = p.iter().find(|&&k| k >= states) {
                return Err(Error::contract(format!(
                    "selected state {bad} out of range for K = {states}"
                )));
            }
        }
    }
    let mut mask = vec![false; n * n];
    for i in 0..rows {
        for k in 0..states {
            let t = grid.get(i, k);
            let out = &mut mask[(i * states + k) * n..(i * states + k + 1) * n];
            for j in 0..i {
                match mode {
                    AttentionMode::Multiple => {
                        for kp in 0..states {
                            out[j * states + kp] = grid.get(j, kp) <= t;
                        }
                    }
                    AttentionMode::Max => {
                        // latest eligible moment; ties go to the later state
                        let best = (0..states)
                            .filter(|&kp| grid.get(j, kp) <= t)
                            .max_by_key(|&kp| (grid.get(j, kp), kp));
                        if let Some(kp) = best {
                            out[j * states + kp] = true;
                        }
                    }
                    AttentionMode::Selected => {
                        let kp = path.expect("checked above")[j];
                        out[j * states + kp] = grid.get(j, kp) <= t;
                    }
                }
            }
            for kp in 0..states {
                out[i * states + kp] = grid.get(i, kp) <= t;
            }
        }
    }
    Ok(mask)
}

/// `(I K) x J` cross-attention mask: state `(i, k)` sees source positions
/// `j < t[i][k]` (zero-based), further limited to the `available` tokens
/// received so far.
pub fn cross_attention_mask(grid: &MomentGrid, source_len: usize, available: usize) -> Vec<bool> {
    let n = grid.rows() * grid.states();
    let mut mask = vec![false; n * source_len];
    for (r, &t) in grid.as_slice().iter().enumerate() {
        let visible = t.min(available).min(source_len);
        mask[r * source_len..r * source_len + visible].fill(true);
    }
    mask
}

/// Causal `J x J` encoder mask.
pub fn causal_mask(len: usize) -> Vec<bool> {
    let mut mask = vec![false; len * len];
    for i in 0..len {
        mask[i * len..=i * len + i].fill(true);
    }
    mask
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn allowed(mask: &[bool], grid: &MomentGrid, from: (usize, usize), to: (usize, usize)) -> bool {
        let n = grid.rows() * grid.states();
        let k = grid.states();
        mask[(from.0 * k + from.1) * n + to.0 * k + to.1]
    }

    #[test]
    fn multiple_mode_example() {
        let g = MomentGrid::new(1, 4, 4, 7);
        let m = self_attention_mask(&g, AttentionMode::Multiple, None).unwrap();
        for kp in 0..4 {
            assert!(allowed(&m, &g, (3, 2), (2, kp)));
        }
    }

    #[test]
    fn max_mode_example() {
        let g = MomentGrid::new(1, 4, 4, 7);
        let m = self_attention_mask(&g, AttentionMode::Max, None).unwrap();
        let row3: Vec<bool> = (0..4).map(|kp| allowed(&m, &g, (3, 2), (2, kp))).collect();
        assert_eq!(row3, vec![false, false, false, true]);
    }

    #[test]
    fn selected_mode_example() {
        let g = MomentGrid::new(1, 4, 4, 7);
        let m = self_attention_mask(&g, AttentionMode::Selected, Some(&[0, 1, 2])).unwrap();
        assert!(!allowed(&m, &g, (3, 0), (2, 2)));
        assert!(allowed(&m, &g, (3, 2), (2, 2)));
        assert!(!allowed(&m, &g, (3, 2), (2, 1)));
        assert!(matches!(
            self_attention_mask(&g, AttentionMode::Selected, Some(&[0])),
            Err(Error::Contract(_))
        ));
        assert!(self_attention_mask(&g, AttentionMode::Selected, None).is_err());
    }

    #[test]
    fn cross_attention_counts() {
        let g = MomentGrid::new(1, 3, 4, 5);
        let m = cross_attention_mask(&g, 5, 5);
        for (r, &t) in g.as_slice().iter().enumerate() {
            let row = &m[r * 5..(r + 1) * 5];
            assert_eq!(row.iter().filter(|&&b| b).count(), t);
            assert!(row[0]);
        }
        let first = &m[0..5];
        assert_eq!(first, &[true, false, false, false, false]);
        let last = &m[11 * 5..12 * 5];
        assert!(last.iter().all(|&b| b));
        let partial = cross_attention_mask(&g, 5, 2);
        assert!(partial.chunks(5).all(|r| r.iter().filter(|&&b| b).count() <= 2));
    }

    #[test]
    fn causal_mask_is_lower_triangular() {
        assert_eq!(
            causal_mask(3),
            vec![true, false, false, true, true, false, true, true, true]
        );
    }

    proptest! {
        #[test]
        fn multiple_contains_max_and_selected(
            states in 1usize..=4, rows in 1usize..=5, j in 1usize..=8, lower in -1i64..=3,
            picks in proptest::collection::vec(0usize..4, 5),
        ) {
            let g = MomentGrid::new(lower, states, rows, j);
            let path: Vec<usize> = picks.iter().map(|p| p % states).collect();
            let multi = self_attention_mask(&g, AttentionMode::Multiple, None).unwrap();
            let max = self_attention_mask(&g, AttentionMode::Max, None).unwrap();
            let sel = self_attention_mask(&g, AttentionMode::Selected, Some(&path)).unwrap();
            let n = rows * states;
            for idx in 0..n * n {
                prop_assert!(!max[idx] || multi[idx]);
                prop_assert!(!sel[idx] || multi[idx]);
            }
            for d in 0..n {
                prop_assert!(multi[d * n + d] && max[d * n + d] && sel[d * n + d]);
            }
            // no state looks at a later token
            for r in 0..n {
                for c in 0..n {
                    if multi[r * n + c] {
                        prop_assert!(c / states <= r / states);
                    }
                }
            }
        }
    }
}
