//! Cross-patch nearest-neighbor scoring.
//!
//! A patch's score is its smallest cosine dissimilarity `1 - cos` to any
//! patch of a comparison grid, regardless of position. Zero vectors have
//! cosine 0 against everything (dissimilarity 1).

use super::pool::FlattenedGrid;
use crate::error::{Error, Result};

/// `1 - cos(a, b)` given precomputed norms, clamped to `[0, 2]`.
#[inline]
fn dissimilarity(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

/// Median with the midpoint convention for even counts. Sorts in place.
pub(crate) fn median_in_place(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn min_dissimilarity(query: &FlattenedGrid, p: usize, against: &FlattenedGrid) -> f64 {
    let (a, na) = (query.row(p), query.norm(p));
    (0..against.rows())
        .map(|r| dissimilarity(a, na, against.row(r), against.norm(r)))
        .fold(f64::INFINITY, f64::min)
}

fn check_grids(grids: &[FlattenedGrid], i: usize) -> Result<()> {
    if grids.len() < 2 {
        return Err(Error::InsufficientWindows { n: grids.len() });
    }
    if i >= grids.len() {
        return Err(Error::invalid_arg(format!(
            "window {i} out of range for {} grids",
            grids.len()
        )));
    }
    let (side, dim) = (grids[0].side(), grids[0].dim());
    if grids.iter().any(|g| g.side() != side || g.dim() != dim) {
        return Err(Error::invalid_arg("grids differ in shape"));
    }
    Ok(())
}

/// All-pairs variant: for each patch of window `i`, the median over windows
/// `j != i` of the best match inside window `j`.
pub fn score_all_pairs(grids: &[FlattenedGrid], i: usize) -> Result<Vec<f64>> {
    check_grids(grids, i)?;
    let query = &grids[i];
    let mut per_window = Vec::with_capacity(grids.len() - 1);
    let scores = (0..query.rows())
        .map(|p| {
            per_window.clear();
            per_window.extend(
                grids
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, g)| min_dissimilarity(query, p, g)),
            );
            median_in_place(&mut per_window)
        })
        .collect();
    Ok(scores)
}

/// Slot-wise, dimension-wise median over windows, optionally leaving one out.
pub fn median_reference(grids: &[FlattenedGrid], exclude: Option<usize>) -> Result<FlattenedGrid> {
    check_grids(grids, exclude.unwrap_or(0))?;
    let first = &grids[0];
    let (rows, dim) = (first.rows(), first.dim());
    let mut column = Vec::with_capacity(grids.len());
    let mut data = Vec::with_capacity(rows * dim);
    for r in 0..rows {
        for d in 0..dim {
            column.clear();
            column.extend(
                grids
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| Some(j) != exclude)
                    .map(|(_, g)| g.row(r)[d]),
            );
            data.push(median_in_place(&mut column));
        }
    }
    FlattenedGrid::from_rows(first.kernel(), first.side(), dim, data)
}

/// Best match of each query patch against any slot of `reference`.
pub fn score_against_reference(query: &FlattenedGrid, reference: &FlattenedGrid) -> Vec<f64> {
    (0..query.rows())
        .map(|p| min_dissimilarity(query, p, reference))
        .collect()
}

/// Median-reference variant for window `i`. The reference includes window
/// `i` itself unless `exclude_self` is set.
pub fn score_median_reference(
    grids: &[FlattenedGrid],
    i: usize,
    exclude_self: bool,
) -> Result<Vec<f64>> {
    check_grids(grids, i)?;
    let reference = median_reference(grids, exclude_self.then_some(i))?;
    Ok(score_against_reference(&grids[i], &reference))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(side: usize, dim: usize, data: Vec<f64>) -> FlattenedGrid {
        FlattenedGrid::from_rows(1, side, dim, data).unwrap()
    }

    #[test]
    fn identical_windows_score_zero() {
        let g = grid(2, 2, vec![1., 0., 0.5, 0.5, 0., 1., 2., 1.]);
        let grids = vec![g.clone(), g.clone(), g];
        for i in 0..3 {
            assert!(score_all_pairs(&grids, i)
                .unwrap()
                .iter()
                .all(|&s| s.abs() < 1e-12));
            assert!(score_median_reference(&grids, i, false)
                .unwrap()
                .iter()
                .all(|&s| s.abs() < 1e-12));
        }
    }

    #[test]
    fn orthogonal_patch_scores_one() {
        // Window 0 patch 0 is (0,1); every other patch anywhere is (1,0).
        let w0 = grid(1, 2, vec![0., 1.]);
        let other = grid(1, 2, vec![1., 0.]);
        let grids = vec![w0, other.clone(), other];
        assert_eq!(score_all_pairs(&grids, 0).unwrap(), vec![1.0]);
    }

    #[test]
    fn single_window_is_an_error() {
        let g = grid(1, 1, vec![1.]);
        assert!(matches!(
            score_all_pairs(&[g.clone()], 0),
            Err(Error::InsufficientWindows { n: 1 })
        ));
        assert!(matches!(
            score_median_reference(&[g], 0, false),
            Err(Error::InsufficientWindows { n: 1 })
        ));
    }

    #[test]
    fn reference_is_componentwise_median() {
        let grids = vec![
            grid(1, 2, vec![1., 0.]),
            grid(1, 2, vec![3., 0.]),
            grid(1, 2, vec![2., 0.]),
        ];
        let v = median_reference(&grids, None).unwrap();
        assert_eq!(v.row(0), &[2., 0.]);
        let v = median_reference(&grids, Some(2)).unwrap();
        assert_eq!(v.row(0), &[2., 0.]);
    }

    #[test]
    fn reference_scoring_examples() {
        let reference = grid(1, 2, vec![1., 0.]);
        let both = FlattenedGrid::from_rows(1, 1, 2, vec![1., 0.]).unwrap();
        assert_eq!(
            score_against_reference(&grid(1, 2, vec![1., 0.]), &both),
            vec![0.0]
        );

        let two_slots =
            FlattenedGrid::from_rows(1, 2, 2, vec![1., 0., 0., 1., 1., 0., 0., 1.]).unwrap();
        let q = FlattenedGrid::from_rows(1, 2, 2, vec![1., 0., 1., 0., 1., 0., 1., 0.]).unwrap();
        assert!(score_against_reference(&q, &two_slots)
            .iter()
            .all(|&s| s == 0.0));

        let s = score_against_reference(&grid(1, 2, vec![1., 1.]), &reference);
        assert!((s[0] - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-12);
        assert!((s[0] - 0.29289).abs() < 1e-5);
    }

    #[test]
    fn zero_vector_has_unit_dissimilarity() {
        let grids = vec![
            grid(1, 2, vec![0., 0.]),
            grid(1, 2, vec![1., 0.]),
            grid(1, 2, vec![1., 0.]),
        ];
        assert_eq!(score_all_pairs(&grids, 0).unwrap(), vec![1.0]);
    }

    #[test]
    fn even_median_is_midpoint() {
        let mut v = vec![4.0, 1.0, 3.0, 2.0];
        assert_eq!(median_in_place(&mut v), 2.5);
    }
}
