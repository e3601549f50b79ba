//! Post archives, tokenization, phrase models, filtering, time slicing and
//! user-level document-term matrices.

mod dtm;
mod filter;
mod ingest;
mod phrases;
mod slice;
mod tokenize;
pub(crate) mod vocab;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use dtm::{DocumentRow, DocumentTermMatrix};
pub use filter::{filter_posts, FilterReport, FilterSet};
pub use ingest::{ingest_posts, ingest_reader, FieldSchema, IngestReport};
pub use phrases::{apply_phrases, learn_phrases, PhraseConfig, PhraseModel};
pub use slice::{slice_and_aggregate, slice_store, Period, PeriodSlice, TimeSlicedCorpus, UserSlice};
pub use tokenize::{tokenize, NUM_TOKEN, URL_TOKEN, USER_TOKEN};
pub use vocab::{Vocabulary, DEFAULT_MAX_VOCAB};

/// One time-stamped text unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub user_id: String,
    /// UTC epoch seconds.
    pub timestamp: i64,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<bool>,
    /// Extra scalar fields from the source record (e.g. a community name).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

/// Posts grouped by user, each user's posts sorted by timestamp.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PostStore {
    users: BTreeMap<String, Vec<Post>>,
}

impl PostStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_posts(posts: impl IntoIterator<Item = Post>) -> Self {
        let mut store = Self::new();
        for p in posts {
            store.users.entry(p.user_id.clone()).or_default().push(p);
        }
        store.sort();
        store
    }

    pub(crate) fn push(&mut self, post: Post) {
        self.users.entry(post.user_id.clone()).or_default().push(post);
    }

    // Stable, so equal timestamps keep their input order.
    pub(crate) fn sort(&mut self) {
        for posts in self.users.values_mut() {
            posts.sort_by_key(|p| p.timestamp);
        }
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn post_count(&self) -> usize {
        self.users.values().map(Vec::len).sum()
    }

    pub fn users(&self) -> impl Iterator<Item = (&str, &[Post])> {
        self.users.iter().map(|(u, p)| (u.as_str(), p.as_slice()))
    }

    pub fn posts(&self, user: &str) -> Option<&[Post]> {
        self.users.get(user).map(Vec::as_slice)
    }

    pub fn iter_posts(&self) -> impl Iterator<Item = &Post> {
        self.users.values().flatten()
    }

    /// The user's label, taken from the first labelled post.
    pub fn label(&self, user: &str) -> Option<bool> {
        self.users.get(user)?.iter().find_map(|p| p.label)
    }

    /// Keeps only the listed users.
    pub fn restrict_users<'a>(&self, keep: impl IntoIterator<Item = &'a str>) -> PostStore {
        let mut users = BTreeMap::new();
        for u in keep {
            if let Some(p) = self.users.get(u) {
                users.insert(u.to_string(), p.clone());
            }
        }
        PostStore { users }
    }

    pub fn retain_posts(&self, mut keep: impl FnMut(&Post) -> bool) -> PostStore {
        let mut users = BTreeMap::new();
        for (u, posts) in &self.users {
            let kept: Vec<Post> = posts.iter().filter(|p| keep(p)).cloned().collect();
            if !kept.is_empty() {
                users.insert(u.clone(), kept);
            }
        }
        PostStore { users }
    }

    pub fn write_jsonl(&self, mut w: impl std::io::Write) -> crate::Result<()> {
        for p in self.iter_posts() {
            serde_json::to_writer(&mut w, p)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}
