use crate::error::{Error, Result};

/// Parses one Pharaoh line of zero-based `j-i` pairs into one-based
/// aligned source positions per target token. A token aligned to several
/// source positions keeps the last; an unaligned token inherits the
/// previous token's position (1 at the start).
pub fn parse_pharaoh(line: &str, target_len: usize, source_len: usize) -> Result<Vec<usize>> {
    let mut last = vec![0usize; target_len];
    for pair in line.split_whitespace() {
        let (j, i) = pair
            .split_once('-')
            .and_then(|(j, i)| Some((j.parse::<usize>().ok()?, i.parse::<usize>().ok()?)))
            .ok_or_else(|| Error::data(format!("bad alignment pair {pair:?}")))?;
        if i >= target_len || j >= source_len {
            return Err(Error::data(format!(
                "alignment {pair} outside {source_len} source x {target_len} target tokens"
            )));
        }
        last[i] = last[i].max(j + 1);
    }
    let mut prev = 1;
    for a in &mut last {
        if *a == 0 {
            *a = prev;
        }
        prev = *a;
    }
    Ok(last)
}

/// Writes one-based positions back as zero-based `j-i` pairs.
pub fn write_pharaoh(alignments: &[usize]) -> String {
    alignments
        .iter()
        .enumerate()
        .map(|(i, &a)| format!("{}-{i}", a.saturating_sub(1)))
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_round_trip() {
        assert_eq!(write_pharaoh(&[1, 2, 3]), "0-0 1-1 2-2");
        assert_eq!(parse_pharaoh("0-0 1-1 2-2", 3, 3).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn many_to_one_keeps_last_source() {
        assert_eq!(parse_pharaoh("0-0 3-0 1-1 2-1", 2, 4).unwrap(), vec![4, 3]);
    }

    #[test]
    fn unaligned_inherits() {
        assert_eq!(parse_pharaoh("2-1", 3, 4).unwrap(), vec![1, 3, 3]);
    }

    #[test]
    fn malformed_and_out_of_range() {
        assert!(parse_pharaoh("0:1", 2, 2).is_err());
        assert!(parse_pharaoh("0-5", 2, 2).is_err());
        assert!(parse_pharaoh("5-0", 2, 2).is_err());
    }
}
