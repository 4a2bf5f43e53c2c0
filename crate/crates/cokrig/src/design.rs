//! Nested experimental designs.
//!
//! Level 1 is the cheapest and largest design; each level above must be a
//! subset of the one below it (within a matching tolerance). Internally
//! every model works on the canonical ordering produced by [`sort_nested`]:
//! the points of level t+1 occupy the trailing block of level t, in the same
//! order, with bitwise identical coordinates. That makes all the shared-point
//! bookkeeping a matter of trailing ranges instead of index maps.

use crate::error::{CokrigError, Result};
use nalgebra::DVector;

/// One design: a list of points, all of the same dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignSet {
    points: Vec<Vec<f64>>,
    dim: usize,
}

impl DesignSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(CokrigError::invalid("a design must contain at least one point"));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(CokrigError::invalid("design points must have at least one coordinate"));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(CokrigError::DimensionMismatch {
                    context: format!("design point {i}"),
                    expected: dim,
                    got: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(CokrigError::invalid(format!(
                    "design point {i} has a non-finite coordinate"
                )));
            }
        }
        Ok(DesignSet { points, dim })
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }
}

pub(crate) fn points_match(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

/// Checks that each level is nested in the previous one and free of
/// duplicates. Returns, for every adjacent pair (t, t+1), the map sending
/// index i of level t+1 to its match in level t. Levels are given cheapest
/// first. Matching is per-coordinate absolute with tolerance `tol`.
pub fn validate_nesting(levels: &[DesignSet], tol: f64) -> Result<Vec<Vec<usize>>> {
    if levels.is_empty() {
        return Err(CokrigError::invalid("at least one design level is required"));
    }
    let dim = levels[0].dim();
    for (t, d) in levels.iter().enumerate() {
        if d.dim() != dim {
            return Err(CokrigError::DimensionMismatch {
                context: format!("design level {}", t + 1),
                expected: dim,
                got: d.dim(),
            });
        }
        for i in 0..d.n() {
            for j in (i + 1)..d.n() {
                if points_match(d.point(i), d.point(j), tol) {
                    return Err(CokrigError::DuplicatePoint {
                        level: t + 1,
                        i,
                        j,
                        tol,
                    });
                }
            }
        }
    }
    let mut maps = Vec::with_capacity(levels.len().saturating_sub(1));
    for t in 1..levels.len() {
        let parent = &levels[t - 1];
        let child = &levels[t];
        if child.n() > parent.n() {
            return Err(CokrigError::invalid(format!(
                "design level {} has more points ({}) than level {} ({})",
                t + 1,
                child.n(),
                t,
                parent.n()
            )));
        }
        let mut map = Vec::with_capacity(child.n());
        for i in 0..child.n() {
            let hit = (0..parent.n()).find(|&j| points_match(child.point(i), parent.point(j), tol));
            match hit {
                Some(j) => map.push(j),
                None => {
                    return Err(CokrigError::NotNested {
                        level: t + 1,
                        parent: t,
                        point: child.point(i).to_vec(),
                        tol,
                    })
                }
            }
        }
        maps.push(map);
    }
    Ok(maps)
}

/// Designs in canonical nested order together with the row permutations that
/// produced them. `permutations[t][new_row] = old_row` for level t.
#[derive(Clone, Debug)]
pub struct SortedDesigns {
    pub levels: Vec<DesignSet>,
    pub permutations: Vec<Vec<usize>>,
}

impl SortedDesigns {
    pub fn s(&self) -> usize {
        self.levels.len()
    }

    pub fn dim(&self) -> usize {
        self.levels[0].dim()
    }

    pub fn n(&self, t: usize) -> usize {
        self.levels[t].n()
    }

    pub fn n_total(&self) -> usize {
        self.levels.iter().map(|d| d.n()).sum()
    }

    /// Offset of level t's block inside the stacked observation vector.
    pub fn offset(&self, t: usize) -> usize {
        self.levels[..t].iter().map(|d| d.n()).sum()
    }
}

/// Reorders every level so shared points sit in the trailing block, permutes
/// the observations identically, and copies the coordinates of shared points
/// down from the cheapest level so they are bitwise equal across levels.
///
/// The reorder is a stable partition applied from the top level down: within
/// level t, points not shared with level t+1 keep their relative order and
/// come first; the shared points follow in level t+1's order.
pub fn sort_nested(
    levels: Vec<DesignSet>,
    observations: Vec<DVector<f64>>,
    tol: f64,
) -> Result<(SortedDesigns, Vec<DVector<f64>>)> {
    if levels.len() != observations.len() {
        return Err(CokrigError::invalid(format!(
            "got {} design levels but {} observation vectors",
            levels.len(),
            observations.len()
        )));
    }
    for (t, (d, z)) in levels.iter().zip(&observations).enumerate() {
        if d.n() != z.len() {
            return Err(CokrigError::DimensionMismatch {
                context: format!("observations at level {}", t + 1),
                expected: d.n(),
                got: z.len(),
            });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(CokrigError::invalid(format!(
                "non-finite observation at level {}",
                t + 1
            )));
        }
    }
    validate_nesting(&levels, tol)?;

    let s = levels.len();
    let mut pts: Vec<Vec<Vec<f64>>> = levels.into_iter().map(|d| d.points).collect();
    let mut obs: Vec<Vec<f64>> = observations
        .into_iter()
        .map(|z| z.iter().copied().collect())
        .collect();
    let mut perms: Vec<Vec<usize>> = pts.iter().map(|p| (0..p.len()).collect()).collect();

    // top-down: reorder level t-1 so the points of level t form its tail
    for t in (1..s).rev() {
        let (lower, upper) = pts.split_at_mut(t);
        let parent = &mut lower[t - 1];
        let child = &upper[0];
        let mut matched = vec![usize::MAX; child.len()];
        let mut is_matched = vec![false; parent.len()];
        for (i, cp) in child.iter().enumerate() {
            let j = (0..parent.len())
                .find(|&j| !is_matched[j] && points_match(cp, &parent[j], tol))
                .expect("validated nesting");
            matched[i] = j;
            is_matched[j] = true;
        }
        let mut order: Vec<usize> = (0..parent.len()).filter(|&j| !is_matched[j]).collect();
        order.extend(matched.iter().copied());
        *parent = order.iter().map(|&j| parent[j].clone()).collect();
        obs[t - 1] = order.iter().map(|&j| obs[t - 1][j]).collect();
        perms[t - 1] = order.iter().map(|&j| perms[t - 1][j]).collect();
    }

    // unify coordinates downward so shared points are bitwise identical
    for t in 1..s {
        let (lower, upper) = pts.split_at_mut(t);
        let parent = &lower[t - 1];
        let child = &mut upper[0];
        let off = parent.len() - child.len();
        for i in 0..child.len() {
            child[i] = parent[off + i].clone();
        }
    }

    for t in 1..s {
        let off = pts[t - 1].len() - pts[t].len();
        debug_assert!((0..pts[t].len()).all(|i| pts[t][i] == pts[t - 1][off + i]));
    }

    let levels = pts
        .into_iter()
        .map(DesignSet::new)
        .collect::<Result<Vec<_>>>()?;
    let observations = obs.into_iter().map(DVector::from_vec).collect();
    Ok((
        SortedDesigns {
            levels,
            permutations: perms,
        },
        observations,
    ))
}
