//! Shape arithmetic shared by forward and backward rules.

/// Numpy-style broadcast of two shapes, aligned at the trailing dimension.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = dim_from_end(a, rank - 1 - i);
        let db = dim_from_end(b, rank - 1 - i);
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn dim_from_end(shape: &[usize], from_end: usize) -> usize {
    if from_end < shape.len() {
        shape[shape.len() - 1 - from_end]
    } else {
        1
    }
}

/// Strides of `shape` as seen from an output of rank `rank`; broadcast axes get stride 0.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        let axis = rank - shape.len() + i;
        strides[axis] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

pub(crate) enum BroadcastKind {
    Same,
    /// The smaller operand repeats every `period` output elements.
    RhsSuffix(usize),
    LhsSuffix(usize),
    General,
}

pub(crate) fn classify(a: &[usize], b: &[usize], out: &[usize]) -> BroadcastKind {
    if a == b {
        return BroadcastKind::Same;
    }
    let is_suffix = |s: &[usize]| s.len() <= out.len() && out[out.len() - s.len()..] == *s;
    if a == out && is_suffix(b) {
        return BroadcastKind::RhsSuffix(b.iter().product());
    }
    if b == out && is_suffix(a) {
        return BroadcastKind::LhsSuffix(a.iter().product());
    }
    BroadcastKind::General
}

/// Calls `f(out_index, a_index, b_index)` for every element of the broadcast output.
pub(crate) fn for_each_broadcast(
    a: &[usize],
    b: &[usize],
    out: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let numel: usize = out.iter().product();
    match classify(a, b, out) {
        BroadcastKind::Same => (0..numel).for_each(|i| f(i, i, i)),
        BroadcastKind::RhsSuffix(p) => (0..numel).for_each(|i| f(i, i, i % p)),
        BroadcastKind::LhsSuffix(p) => (0..numel).for_each(|i| f(i, i % p, i)),
        BroadcastKind::General => {
            let sa = broadcast_strides(a, out);
            let sb = broadcast_strides(b, out);
            let rank = out.len();
            let mut idx = vec![0usize; rank];
            let (mut ia, mut ib) = (0usize, 0usize);
            for o in 0..numel {
                f(o, ia, ib);
                for ax in (0..rank).rev() {
                    idx[ax] += 1;
                    ia += sa[ax];
                    ib += sb[ax];
                    if idx[ax] < out[ax] {
                        break;
                    }
                    ia -= sa[ax] * out[ax];
                    ib -= sb[ax] * out[ax];
                    idx[ax] = 0;
                }
            }
        }
    }
}

/// Splits `shape` around `axis` into (outer, axis length, inner).
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// For every output element of `x.permute(perm)`, the flat index into `x`.
pub(crate) fn permute_source_indices(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let in_strides = strides_of(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let numel: usize = shape.iter().product();
    let rank = shape.len();
    let mut out = Vec::with_capacity(numel);
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..numel {
        out.push(src);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 1, 4], &[3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[2]), None);
    }

    #[test]
    fn general_broadcast_indices() {
        let mut seen = vec![];
        for_each_broadcast(&[2, 1], &[1, 3], &[2, 3], |o, a, b| seen.push((o, a, b)));
        assert_eq!(
            seen,
            vec![(0, 0, 0), (1, 0, 1), (2, 0, 2), (3, 1, 0), (4, 1, 1), (5, 1, 2)]
        );
    }

    #[test]
    fn permute_indices_transpose() {
        assert_eq!(permute_source_indices(&[2, 3], &[1, 0]), vec![0, 3, 1, 4, 2, 5]);
    }
}
