//! Folksonomy ingestion: `(user, tag, item)` assignments, vocabularies,
//! infrequent-tag filtering, splitting, and the matrices derived from them.

mod cache;
mod load;
mod matrices;
mod split;

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};

pub use cache::{read_cache, write_cache, CACHE_FILES};
pub use load::{load_assignments, parse_assignments, ColumnMapping, HeaderMode, LoadedAssignments, MalformedRow};
pub use matrices::{
    build_profiles, build_rating_matrix, normalize_profiles, normalize_profiles_allow_empty,
    ProfileKind, ProfileMatrix, RatingMatrix,
};
pub use split::{largest_remainder, split_assignments, SplitFolksonomy, SplitRatios};

/// One raw annotation: `user` tagged `item` with `tag`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment {
    pub user: String,
    pub tag: String,
    pub item: String,
}

impl Assignment {
    pub fn new(user: impl Into<String>, tag: impl Into<String>, item: impl Into<String>) -> Self {
        Assignment {
            user: user.into(),
            tag: tag.into(),
            item: item.into(),
        }
    }
}

/// An assignment expressed as vocabulary indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub user: usize,
    pub tag: usize,
    pub item: usize,
}

/// Ordered token vocabulary; index order is first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vocabulary from tokens that must be distinct.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut vocab = Vocabulary::new();
        for t in tokens {
            if t.is_empty() {
                return Err(Error::Data("empty vocabulary token".into()));
            }
            if vocab.index.contains_key(&t) {
                return Err(Error::Data(format!("duplicate vocabulary token {t:?}")));
            }
            vocab.intern(&t);
        }
        Ok(vocab)
    }

    pub fn intern(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), i);
        i
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Keeps the flagged entries, preserving relative order. Returns the
    /// pruned vocabulary and the old→new index map.
    fn retain(&self, keep: &[bool]) -> (Vocabulary, Vec<Option<usize>>) {
        let mut out = Vocabulary::new();
        let remap = self
            .tokens
            .iter()
            .zip(keep)
            .map(|(t, &k)| k.then(|| out.intern(t)))
            .collect();
        (out, remap)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabularies {
    pub users: Vocabulary,
    pub tags: Vocabulary,
    pub items: Vocabulary,
}

impl Vocabularies {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.users.len(), self.tags.len(), self.items.len())
    }
}

/// `(U, T, D, A)`: the three vocabularies and the deduplicated assignment set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Folksonomy {
    vocab: Vocabularies,
    assignments: Vec<Triple>,
}

/// Borrowed assignment subset over a shared vocabulary (a whole folksonomy
/// or one of its splits).
#[derive(Debug, Clone, Copy)]
pub struct View<'a> {
    pub vocab: &'a Vocabularies,
    pub assignments: &'a [Triple],
}

impl Folksonomy {
    /// Interns the raw stream, dropping repeated triples. Vocabulary and
    /// assignment order follow first appearance.
    pub fn from_assignments<'a, I>(raw: I) -> Self
    where
        I: IntoIterator<Item = &'a Assignment>,
    {
        let mut vocab = Vocabularies::default();
        let mut seen = HashSet::new();
        let mut assignments = Vec::new();
        for a in raw {
            let t = Triple {
                user: vocab.users.intern(&a.user),
                tag: vocab.tags.intern(&a.tag),
                item: vocab.items.intern(&a.item),
            };
            if seen.insert(t) {
                assignments.push(t);
            }
        }
        Folksonomy { vocab, assignments }
    }

    /// Assembles a folksonomy from pre-indexed parts, validating indices and
    /// rejecting duplicates.
    pub fn from_parts(vocab: Vocabularies, assignments: Vec<Triple>) -> Result<Self> {
        let (nu, nt, nd) = vocab.dims();
        let mut seen = HashSet::with_capacity(assignments.len());
        for t in &assignments {
            if t.user >= nu || t.tag >= nt || t.item >= nd {
                return Err(Error::Data(format!("assignment {t:?} out of vocabulary range")));
            }
            if !seen.insert(*t) {
                return Err(Error::Data(format!("duplicate assignment {t:?}")));
            }
        }
        Ok(Folksonomy { vocab, assignments })
    }

    pub fn vocab(&self) -> &Vocabularies {
        &self.vocab
    }

    pub fn assignments(&self) -> &[Triple] {
        &self.assignments
    }

    pub fn view(&self) -> View<'_> {
        View {
            vocab: &self.vocab,
            assignments: &self.assignments,
        }
    }

    /// Global number of assignments per tag.
    pub fn tag_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.vocab.tags.len()];
        for t in &self.assignments {
            counts[t.tag] += 1;
        }
        counts
    }

    /// Drops tags used fewer than `min_uses` times, their assignments, and
    /// any user or item left without assignments.
    pub fn filter_infrequent_tags(&self, min_uses: usize) -> Result<Folksonomy> {
        if min_uses == 0 {
            return Err(Error::Config("min_uses must be at least 1".into()));
        }
        let keep_tag: Vec<bool> = self.tag_counts().iter().map(|&c| c >= min_uses).collect();
        let kept: Vec<Triple> = self
            .assignments
            .iter()
            .filter(|t| keep_tag[t.tag])
            .copied()
            .collect();
        if kept.is_empty() {
            return Err(Error::Data(format!(
                "no tag is used at least {min_uses} times; filter removed everything"
            )));
        }

        let mut keep_user = vec![false; self.vocab.users.len()];
        let mut keep_item = vec![false; self.vocab.items.len()];
        for t in &kept {
            keep_user[t.user] = true;
            keep_item[t.item] = true;
        }
        let (users, user_map) = self.vocab.users.retain(&keep_user);
        let (tags, tag_map) = self.vocab.tags.retain(&keep_tag);
        let (items, item_map) = self.vocab.items.retain(&keep_item);

        let assignments = kept
            .into_iter()
            .map(|t| Triple {
                user: user_map[t.user].expect("user kept"),
                tag: tag_map[t.tag].expect("tag kept"),
                item: item_map[t.item].expect("item kept"),
            })
            .collect();
        Ok(Folksonomy {
            vocab: Vocabularies { users, tags, items },
            assignments,
        })
    }

    pub fn summary(&self) -> Summary {
        Summary {
            users: self.vocab.users.len(),
            tags: self.vocab.tags.len(),
            items: self.vocab.items.len(),
            assignments: self.assignments.len(),
        }
    }
}

/// Dataset size line: users, tags, items, assignments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Summary {
    pub users: usize,
    pub tags: usize,
    pub items: usize,
    pub assignments: usize,
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "users\ttags\titems\tassignments")?;
        write!(
            f,
            "{}\t{}\t{}\t{}",
            self.users, self.tags, self.items, self.assignments
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn folk(rows: &[(&str, &str, &str)]) -> Folksonomy {
        let raw: Vec<Assignment> = rows.iter().map(|(u, t, d)| Assignment::new(*u, *t, *d)).collect();
        Folksonomy::from_assignments(&raw)
    }

    #[test]
    fn deduplicates_and_orders_by_first_seen() {
        let f = folk(&[("u2", "t1", "d1"), ("u1", "t1", "d1"), ("u2", "t1", "d1")]);
        assert_eq!(f.assignments().len(), 2);
        assert_eq!(f.vocab().users.tokens(), &["u2", "u1"]);
    }

    #[test]
    fn min_uses_one_is_identity() {
        let f = folk(&[("u1", "t1", "d1"), ("u1", "t2", "d1"), ("u2", "t1", "d2")]);
        assert_eq!(f.filter_infrequent_tags(1).unwrap(), f);
    }

    #[test]
    fn drops_rare_tags_and_orphans() {
        let mut rows = Vec::new();
        let users: Vec<String> = (0..20).map(|i| format!("u{i}")).collect();
        for u in &users {
            rows.push((u.as_str(), "a", "d1"));
        }
        rows.push(("lonely", "b", "d9"));
        rows.push(("u0", "b", "d1"));
        rows.push(("u1", "b", "d2"));
        let f = folk(&rows);
        let g = f.filter_infrequent_tags(15).unwrap();
        assert_eq!(g.vocab().tags.tokens(), &["a"]);
        assert_eq!(g.assignments().len(), 20);
        assert!(g.vocab().users.get("lonely").is_none());
        assert_eq!(g.vocab().items.tokens(), &["d1"]);
    }

    #[test]
    fn over_aggressive_filter_errors() {
        let f = folk(&[("u1", "t1", "d1")]);
        assert!(matches!(f.filter_infrequent_tags(2), Err(Error::Data(_))));
        assert!(f.filter_infrequent_tags(0).is_err());
    }

    #[test]
    fn from_parts_validates() {
        let f = folk(&[("u1", "t1", "d1")]);
        let bad = vec![Triple { user: 0, tag: 3, item: 0 }];
        assert!(Folksonomy::from_parts(f.vocab().clone(), bad).is_err());
        let dup = vec![f.assignments()[0]; 2];
        assert!(Folksonomy::from_parts(f.vocab().clone(), dup).is_err());
    }

    fn arb_folksonomy() -> impl Strategy<Value = Folksonomy> {
        proptest::collection::vec((0u8..8, 0u8..10, 0u8..12), 1..200).prop_map(|rows| {
            let raw: Vec<Assignment> = rows
                .iter()
                .map(|(u, t, d)| Assignment::new(format!("u{u}"), format!("t{t}"), format!("d{d}")))
                .collect();
            Folksonomy::from_assignments(&raw)
        })
    }

    proptest! {
        #[test]
        fn filter_is_idempotent(f in arb_folksonomy(), min_uses in 1usize..6) {
            if let Ok(once) = f.filter_infrequent_tags(min_uses) {
                let twice = once.filter_infrequent_tags(min_uses).unwrap();
                prop_assert_eq!(once, twice);
            }
        }

        #[test]
        fn filtered_counts_respect_threshold(f in arb_folksonomy(), min_uses in 1usize..6) {
            if let Ok(g) = f.filter_infrequent_tags(min_uses) {
                prop_assert!(g.tag_counts().iter().all(|&c| c >= min_uses));
                let kept = f.tag_counts().iter().filter(|&&c| c >= min_uses).count();
                prop_assert_eq!(g.vocab().tags.len(), kept);
            }
        }
    }
}
