use std::collections::{BTreeMap, BTreeSet};

use super::View;
use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileKind {
    Users,
    Items,
}

/// Tag-count profiles, one row per user (or item), one column per tag.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileMatrix {
    kind: ProfileKind,
    values: DenseMatrix,
    normalized: bool,
}

impl ProfileMatrix {
    pub fn kind(&self) -> ProfileKind {
        self.kind
    }

    pub fn values(&self) -> &DenseMatrix {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn tags(&self) -> usize {
        self.values.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    /// Lays the selected profiles out as columns of a `|T| × ids.len()`
    /// matrix, the batch layout the autoencoder consumes.
    pub fn columns(&self, ids: &[usize]) -> DenseMatrix {
        DenseMatrix::from_fn(self.tags(), ids.len(), |t, c| self.values.get(ids[c], t))
    }

    pub fn from_values(kind: ProfileKind, values: DenseMatrix, normalized: bool) -> Self {
        ProfileMatrix {
            kind,
            values,
            normalized,
        }
    }
}

/// Counts tag usage per user (`X`, `|U|×|T|`) and per item (`Y`, `|D|×|T|`)
/// over the view's assignments.
pub fn build_profiles(view: View<'_>) -> Result<(ProfileMatrix, ProfileMatrix)> {
    if view.assignments.is_empty() {
        return Err(Error::Data("cannot build profiles from an empty assignment set".into()));
    }
    let (nu, nt, nd) = view.vocab.dims();
    let mut users = DenseMatrix::zeros(nu, nt);
    let mut items = DenseMatrix::zeros(nd, nt);
    for a in view.assignments {
        users.row_mut(a.user)[a.tag] += 1.0;
        items.row_mut(a.item)[a.tag] += 1.0;
    }
    Ok((
        ProfileMatrix::from_values(ProfileKind::Users, users, false),
        ProfileMatrix::from_values(ProfileKind::Items, items, false),
    ))
}

fn normalize(m: &ProfileMatrix, allow_empty: bool) -> Result<ProfileMatrix> {
    let mut values = m.values.clone();
    for r in 0..values.rows() {
        let row = values.row_mut(r);
        if row.iter().any(|&v| v < 0.0) {
            return Err(Error::Data(format!("profile row {r} has a negative entry")));
        }
        let max = row.iter().copied().fold(0.0, f64::max);
        if max == 0.0 {
            if allow_empty {
                continue;
            }
            return Err(Error::Data(format!("profile row {r} is all zeros")));
        }
        row.iter_mut().for_each(|v| *v /= max);
    }
    Ok(ProfileMatrix::from_values(m.kind, values, true))
}

/// Divides each row by its maximum so values lie in `[0, 1]` (the range a
/// tanh output layer can reach). All-zero rows are an error.
pub fn normalize_profiles(m: &ProfileMatrix) -> Result<ProfileMatrix> {
    normalize(m, false)
}

/// As [`normalize_profiles`] but leaves all-zero rows at zero. A training
/// split legitimately has users and items whose assignments all fell into
/// the held-out parts.
pub fn normalize_profiles_allow_empty(m: &ProfileMatrix) -> Result<ProfileMatrix> {
    normalize(m, true)
}

/// Sparse user-item ratings: `r_ij` is the number of distinct tags user `i`
/// gave item `j`. Cells absent from the map are unobserved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingMatrix {
    users: usize,
    items: usize,
    entries: BTreeMap<(usize, usize), u32>,
}

impl RatingMatrix {
    /// Builds a rating matrix from explicit cells. Zero ratings are rejected.
    pub fn from_entries(
        users: usize,
        items: usize,
        cells: impl IntoIterator<Item = ((usize, usize), u32)>,
    ) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for ((u, i), r) in cells {
            if u >= users || i >= items {
                return Err(Error::Data(format!("rating cell ({u}, {i}) out of range")));
            }
            if r == 0 {
                return Err(Error::Data(format!("rating cell ({u}, {i}) is zero")));
            }
            entries.insert((u, i), r);
        }
        Ok(RatingMatrix { users, items, entries })
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn items(&self) -> usize {
        self.items
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, user: usize, item: usize) -> Option<u32> {
        self.entries.get(&(user, item)).copied()
    }

    /// Observed cells in (user, item) order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        self.entries.iter().map(|(&(u, i), &r)| (u, i, r))
    }

    /// Every rating clipped to 1.
    pub fn binarized(&self) -> RatingMatrix {
        RatingMatrix {
            users: self.users,
            items: self.items,
            entries: self.entries.keys().map(|&k| (k, 1)).collect(),
        }
    }

    /// Items each user has an observed rating for.
    pub fn items_by_user(&self) -> Vec<BTreeSet<usize>> {
        let mut out = vec![BTreeSet::new(); self.users];
        for &(u, i) in self.entries.keys() {
            out[u].insert(i);
        }
        out
    }
}

pub fn build_rating_matrix(view: View<'_>) -> Result<RatingMatrix> {
    if view.assignments.is_empty() {
        return Err(Error::Data("cannot build ratings from an empty assignment set".into()));
    }
    let (nu, _, nd) = view.vocab.dims();
    let mut entries = BTreeMap::new();
    // Assignments are distinct triples, so counting them per (user, item)
    // counts distinct tags.
    for a in view.assignments {
        *entries.entry((a.user, a.item)).or_insert(0) += 1;
    }
    Ok(RatingMatrix {
        users: nu,
        items: nd,
        entries,
    })
}
