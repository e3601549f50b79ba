use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::dtm::DocumentRow;
use super::{apply_phrases, tokenize, DocumentTermMatrix, PhraseModel, PostStore, Vocabulary};
use crate::{Error, Result};

/// Half-open UTC interval `[start, end)` in epoch seconds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Period {
    pub name: String,
    pub start: i64,
    pub end: i64,
}

impl Period {
    pub fn new(name: impl Into<String>, start: i64, end: i64) -> Self {
        Self { name: name.into(), start, end }
    }

    pub fn contains(&self, ts: i64) -> bool {
        self.start <= ts && ts < self.end
    }

    pub fn overlaps(&self, other: &Period) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn validate_all(periods: &[Period]) -> Result<()> {
        for (i, p) in periods.iter().enumerate() {
            if p.start >= p.end {
                return Err(Error::invalid("period", format!("`{}` is empty or reversed", p.name)));
            }
            for q in &periods[i + 1..] {
                if p.name == q.name {
                    return Err(Error::invalid("period", format!("duplicate name `{}`", p.name)));
                }
                if p.overlaps(q) {
                    return Err(Error::invalid("period", format!("`{}` overlaps `{}`", p.name, q.name)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UserSlice {
    pub label: Option<bool>,
    /// Tokenized (and phrased) posts in timestamp order.
    pub posts: Vec<Vec<String>>,
}

impl UserSlice {
    pub fn tokens(&self) -> impl Iterator<Item = &String> {
        self.posts.iter().flatten()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodSlice {
    pub period: Period,
    pub users: BTreeMap<String, UserSlice>,
    pub term_freqs: HashMap<String, u64>,
}

impl PeriodSlice {
    pub fn post_count(&self) -> usize {
        self.users.values().map(|u| u.posts.len()).sum()
    }

    pub fn sentences(&self) -> impl Iterator<Item = &Vec<String>> {
        self.users.values().flat_map(|u| u.posts.iter())
    }

    pub fn vocabulary(&self, min_count: u64, max_size: usize) -> Vocabulary {
        Vocabulary::from_counts(self.term_freqs.iter().map(|(t, c)| (t.clone(), *c)), min_count, max_size)
    }

    /// One row per user with at least `min_posts` posts in the period.
    pub fn dtm(&self, vocab: Arc<Vocabulary>, min_posts: usize) -> DocumentTermMatrix {
        DocumentTermMatrix::from_rows(
            self.users
                .iter()
                .filter(|(_, u)| u.posts.len() >= min_posts)
                .map(|(id, u)| DocumentRow::new(id.clone(), u.tokens(), u.label, u.posts.len() as u32)),
            vocab,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSlicedCorpus {
    pub slices: Vec<PeriodSlice>,
}

impl TimeSlicedCorpus {
    pub fn get(&self, name: &str) -> Option<&PeriodSlice> {
        self.slices.iter().find(|s| s.period.name == name)
    }
}

/// Tokenizes every post, applies the matching period's phrase model (when
/// given, one per period) and attributes it to the period containing its
/// timestamp. Posts outside every period are dropped.
pub fn slice_store(store: &PostStore, periods: &[Period], phrases: Option<&[PhraseModel]>) -> Result<TimeSlicedCorpus> {
    Period::validate_all(periods)?;
    if let Some(models) = phrases {
        if models.len() != periods.len() {
            return Err(Error::invalid("phrase models", "need one model per period"));
        }
    }
    let mut slices: Vec<PeriodSlice> = periods
        .iter()
        .map(|p| PeriodSlice {
            period: p.clone(),
            users: BTreeMap::new(),
            term_freqs: HashMap::new(),
        })
        .collect();
    for (user, posts) in store.users() {
        let label = store.label(user);
        for post in posts {
            let Some(k) = periods.iter().position(|p| p.contains(post.timestamp)) else {
                continue;
            };
            let mut tokens = tokenize(&post.text);
            if let Some(models) = phrases {
                tokens = apply_phrases(&tokens, &models[k]);
            }
            let slice = &mut slices[k];
            for t in &tokens {
                *slice.term_freqs.entry(t.clone()).or_default() += 1;
            }
            slice
                .users
                .entry(user.to_string())
                .or_insert_with(|| UserSlice { label, posts: Vec::new() })
                .posts
                .push(tokens);
        }
    }
    Ok(TimeSlicedCorpus { slices })
}

pub fn slice_and_aggregate(
    store: &PostStore,
    periods: &[Period],
    min_posts: usize,
    vocab: Arc<Vocabulary>,
    phrases: Option<&[PhraseModel]>,
) -> Result<(TimeSlicedCorpus, Vec<DocumentTermMatrix>)> {
    if min_posts < 1 {
        return Err(Error::invalid("min_posts", "must be >= 1"));
    }
    let corpus = slice_store(store, periods, phrases)?;
    let dtms = corpus.slices.iter().map(|s| s.dtm(Arc::clone(&vocab), min_posts)).collect();
    Ok((corpus, dtms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Post;
    use proptest::prelude::*;

    fn post(user: &str, ts: i64, text: &str) -> Post {
        Post {
            user_id: user.into(),
            timestamp: ts,
            text: text.into(),
            label: Some(user.starts_with('p')),
            metadata: Default::default(),
        }
    }

    fn vocab(terms: &[&str]) -> Arc<Vocabulary> {
        Arc::new(Vocabulary::from_ordered(terms.iter().map(|t| (t.to_string(), 1))).unwrap())
    }

    #[test]
    fn below_min_posts_excluded() {
        let posts = (0..150).map(|i| post("u", i, "a"));
        let store = PostStore::from_posts(posts);
        let periods = [Period::new("A", 0, 1000)];
        let (corpus, dtms) = slice_and_aggregate(&store, &periods, 200, vocab(&["a"]), None).unwrap();
        assert_eq!(dtms[0].n_rows(), 0);
        assert_eq!(corpus.slices[0].users["u"].posts.len(), 150);
    }

    #[test]
    fn counts_concatenated_stream() {
        let store = PostStore::from_posts(vec![post("u", 1, "a b"), post("u", 2, "b c")]);
        let (_, dtms) = slice_and_aggregate(&store, &[Period::new("A", 0, 10)], 1, vocab(&["a", "b", "c"]), None).unwrap();
        assert_eq!(dtms[0].row(0), (&[0u32, 1, 2][..], &[1u32, 2, 1][..]));
    }

    #[test]
    fn user_in_one_period_only() {
        let store = PostStore::from_posts(vec![post("u", 1, "a"), post("v", 1, "a"), post("v", 15, "a")]);
        let periods = [Period::new("one", 0, 10), Period::new("two", 10, 20)];
        let (_, dtms) = slice_and_aggregate(&store, &periods, 1, vocab(&["a"]), None).unwrap();
        assert_eq!(dtms[0].row_ids(), ["u", "v"]);
        assert_eq!(dtms[1].row_ids(), ["v"]);
    }

    #[test]
    fn rejects_overlap() {
        let periods = [Period::new("a", 0, 10), Period::new("b", 5, 20)];
        assert!(slice_store(&PostStore::new(), &periods, None).is_err());
    }

    proptest! {
        #[test]
        fn slicing_partitions_posts(ts in prop::collection::vec(0i64..300, 1..60), cut1 in 1i64..150, cut2 in 150i64..299) {
            let posts: Vec<Post> = ts.iter().enumerate().map(|(i, t)| post(if i % 2 == 0 { "p" } else { "n" }, *t, "x")).collect();
            let store = PostStore::from_posts(posts);
            let periods = [Period::new("a", 0, cut1), Period::new("b", cut1, cut2)];
            let corpus = slice_store(&store, &periods, None).unwrap();
            for (user, posts) in store.users() {
                let within = posts.iter().filter(|p| p.timestamp < cut2).count();
                let sliced: usize = corpus.slices.iter().map(|s| s.users.get(user).map_or(0, |u| u.posts.len())).sum();
                prop_assert_eq!(within, sliced);
            }
        }
    }
}
