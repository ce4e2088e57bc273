/// Translating moments `t[i][k]`: how many source tokens state `(i, k)` has
/// received when it starts translating target token `i`.
///
/// Indices are zero-based here: `moment(i, k) = clamp(L + i + k, 1, J)`,
/// which is the one-based `min(L + (i-1) + (k-1), J)` with the lower clamp at 1
/// for non-positive `L`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MomentGrid {
    rows: usize,
    states: usize,
    source_len: Option<usize>,
    t: Vec<usize>,
}

impl MomentGrid {
    /// Grid for a target of `rows` tokens over a source of `source_len` tokens.
    pub fn new(lower: i64, states: usize, rows: usize, source_len: usize) -> Self {
        Self::build(lower, states, rows, Some(source_len))
    }

    /// Grid for a source whose length is not yet known (`None`): moments are
    /// not clamped from above.
    pub fn streaming(lower: i64, states: usize, rows: usize, source_len: Option<usize>) -> Self {
        Self::build(lower, states, rows, source_len)
    }

    fn build(lower: i64, states: usize, rows: usize, source_len: Option<usize>) -> Self {
        let mut t = Vec::with_capacity(rows * states);
        for i in 0..rows {
            for k in 0..states {
                t.push(moment(lower, i, k, source_len));
            }
        }
        Self {
            rows,
            states,
            source_len,
            t,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn source_len(&self) -> Option<usize> {
        self.source_len
    }

    pub fn get(&self, i: usize, k: usize) -> usize {
        self.t[i * self.states + k]
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.t[i * self.states..(i + 1) * self.states]
    }

    /// Flattened `rows * states` moments, state-major within each row.
    pub fn as_slice(&self) -> &[usize] {
        &self.t
    }

    /// Moment of the selection before row `i` (`0` for the implicit start).
    pub fn previous_moment(&self, i: usize, prev_state: Option<usize>) -> usize {
        match (i, prev_state) {
            (0, _) | (_, None) => 0,
            (i, Some(k)) => self.get(i - 1, k),
        }
    }

    /// States of row `i` reachable after a selection at moment `prev`, in
    /// judging order. These are exactly the states with `t[i][k] >= prev`.
    pub fn judged(&self, i: usize, prev: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(i)
            .iter()
            .enumerate()
            .filter(move |(_, &t)| t >= prev)
            .map(|(k, _)| k)
    }
}

/// Zero-based moment of state `k` for target row `i`.
pub fn moment(lower: i64, i: usize, k: usize, source_len: Option<usize>) -> usize {
    let raw = lower + i as i64 + k as i64;
    let capped = match source_len {
        Some(j) => raw.min(j as i64),
        None => raw,
    };
    capped.max(1) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unclamped_rows() {
        let g = MomentGrid::new(1, 4, 5, 7);
        assert_eq!(g.row(2), &[3, 4, 5, 6]);
        assert_eq!(g.row(3), &[4, 5, 6, 7]);
    }

    #[test]
    fn clamped_to_source_length() {
        let g = MomentGrid::new(1, 4, 3, 2);
        assert_eq!(g.row(2), &[2, 2, 2, 2]);
    }

    #[test]
    fn negative_lower_boundary_floors_at_one() {
        let g = MomentGrid::new(-1, 4, 2, 5);
        assert_eq!(g.row(0), &[1, 1, 1, 2]);
        assert_eq!(g.row(1), &[1, 1, 2, 3]);
    }

    #[test]
    fn streaming_grid_matches_known_length_below_it() {
        let known = MomentGrid::new(2, 3, 6, 20);
        let open = MomentGrid::streaming(2, 3, 6, None);
        assert_eq!(
            known,
            MomentGrid {
                source_len: Some(20),
                ..open
            }
        );
    }

    #[test]
    fn judged_states_follow_previous_moment() {
        let g = MomentGrid::new(1, 4, 5, 7);
        let judged: Vec<_> = g.judged(3, 5).collect();
        assert_eq!(judged, vec![1, 2, 3]);
        assert_eq!(g.judged(0, 0).count(), 4);
    }

    #[test]
    fn grid_is_monotone() {
        for lower in -2..4 {
            for j in 1..9 {
                let g = MomentGrid::new(lower, 4, 8, j);
                for i in 0..8 {
                    for k in 0..4 {
                        let t = g.get(i, k);
                        assert!((1..=j).contains(&t));
                        if k + 1 < 4 {
                            assert!(t <= g.get(i, k + 1));
                        }
                        if i + 1 < 8 {
                            assert!(t <= g.get(i + 1, k));
                        }
                    }
                }
            }
        }
    }
}
