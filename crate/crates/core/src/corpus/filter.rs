use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{apply_phrases, tokenize, PhraseModel, Post, PostStore};

type Predicate = Box<dyn Fn(&Post) -> bool + Send + Sync>;

/// Post exclusion rules. A post is removed by the first rule it matches, in
/// the order community, term, custom.
#[derive(Default)]
pub struct FilterSet {
    /// Matched against tokens after phrasing.
    pub term_blocklist: BTreeSet<String>,
    /// Metadata field holding the source community (e.g. `subreddit`).
    pub community_field: Option<String>,
    pub community_blocklist: BTreeSet<String>,
    pub phrases: Option<PhraseModel>,
    /// Returns true for posts that should be dropped.
    pub custom: Option<Predicate>,
}

impl std::fmt::Debug for FilterSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FilterSet")
            .field("term_blocklist", &self.term_blocklist)
            .field("community_field", &self.community_field)
            .field("community_blocklist", &self.community_blocklist)
            .field("custom", &self.custom.is_some())
            .finish()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub community: usize,
    pub term: usize,
    pub custom: usize,
}

impl FilterReport {
    pub fn total(&self) -> usize {
        self.community + self.term + self.custom
    }
}

impl FilterSet {
    pub fn is_empty(&self) -> bool {
        self.term_blocklist.is_empty() && self.community_blocklist.is_empty() && self.custom.is_none()
    }

    fn community_hit(&self, post: &Post) -> bool {
        if self.community_blocklist.is_empty() {
            return false;
        }
        let field = self.community_field.as_deref().unwrap_or("community");
        post.metadata
            .get(field)
            .is_some_and(|c| self.community_blocklist.contains(&c.to_lowercase()) || self.community_blocklist.contains(c))
    }

    fn term_hit(&self, post: &Post) -> bool {
        if self.term_blocklist.is_empty() {
            return false;
        }
        let tokens = tokenize(&post.text);
        let tokens = match &self.phrases {
            Some(m) => apply_phrases(&tokens, m),
            None => tokens,
        };
        tokens.iter().any(|t| self.term_blocklist.contains(t))
    }
}

pub fn filter_posts(store: &PostStore, filters: &FilterSet) -> (PostStore, FilterReport) {
    let mut report = FilterReport::default();
    if filters.is_empty() {
        return (store.clone(), report);
    }
    let kept = store.retain_posts(|p| {
        if filters.community_hit(p) {
            report.community += 1;
            false
        } else if filters.term_hit(p) {
            report.term += 1;
            false
        } else if filters.custom.as_ref().is_some_and(|f| f(p)) {
            report.custom += 1;
            false
        } else {
            true
        }
    });
    (kept, report)
}
