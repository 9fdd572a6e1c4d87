use crate::error::{Error, Result};

/// Trailing-dimension broadcast with size-1 expansion.
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// For every flat index of `out`, the flat index of the broadcast source.
pub(crate) fn broadcast_map(src: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let offset = rank - src.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        strides[i + offset] = if src[i] == 1 { 0 } else { acc };
        acc *= src[i];
    }
    let total: usize = out.iter().product();
    let mut map = Vec::with_capacity(total);
    if rank == 0 {
        map.push(0);
        return map;
    }
    let mut idx = vec![0usize; rank];
    let mut pos = 0usize;
    for _ in 0..total {
        map.push(pos);
        for d in (0..rank).rev() {
            idx[d] += 1;
            pos += strides[d];
            if idx[d] < out[d] {
                break;
            }
            pos -= strides[d] * out[d];
            idx[d] = 0;
        }
    }
    map
}

/// Validated, sorted, de-duplicated axis list.
pub(crate) fn normalize_axes(axes: &[usize], rank: usize) -> Result<Vec<usize>> {
    let mut v = axes.to_vec();
    v.sort_unstable();
    for w in v.windows(2) {
        if w[0] == w[1] {
            return Err(Error::InvalidAxis { axis: w[0], rank });
        }
    }
    if let Some(&bad) = v.iter().find(|&&a| a >= rank) {
        return Err(Error::InvalidAxis { axis: bad, rank });
    }
    Ok(v)
}

/// Reduction layout: the keep-dims output shape and, for each input
/// element, the output slot it reduces into.
pub(crate) struct Reduction {
    pub kept_shape: Vec<usize>,
    pub group_of: Vec<usize>,
    pub groups: usize,
    pub group_size: usize,
}

pub(crate) fn reduction(shape: &[usize], axes: &[usize]) -> Reduction {
    let mut kept = shape.to_vec();
    for &a in axes {
        kept[a] = 1;
    }
    let groups: usize = kept.iter().product();
    let group_size = shape.iter().product::<usize>() / groups;
    Reduction {
        group_of: broadcast_map(&kept, shape),
        kept_shape: kept,
        groups,
        group_size,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape("t", &[2, 3], &[3]).unwrap(), vec![2, 3]);
        assert_eq!(broadcast_shape("t", &[4, 1, 3], &[2, 1]).unwrap(), vec![4, 2, 3]);
        assert!(broadcast_shape("t", &[2, 3], &[2]).is_err());
    }

    #[test]
    fn broadcast_map_row_vector() {
        assert_eq!(broadcast_map(&[3], &[2, 3]), vec![0, 1, 2, 0, 1, 2]);
        assert_eq!(broadcast_map(&[2, 1], &[2, 3]), vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn axes_validation() {
        assert!(normalize_axes(&[0, 0], 2).is_err());
        assert!(normalize_axes(&[2], 2).is_err());
        assert_eq!(normalize_axes(&[1, 0], 2).unwrap(), vec![0, 1]);
    }
}
