use std::collections::HashMap;
use std::sync::RwLock;

/// (model, evaluator, prompt) identity of a cached vote probability.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    model: String,
    evaluator: String,
    prompt: String,
}

impl CacheKey {
    pub fn new(model: &str, evaluator: &str, prompt: &str) -> Self {
        Self {
            model: model.to_string(),
            evaluator: evaluator.to_string(),
            prompt: prompt.to_string(),
        }
    }
}

/// Thread-safe memo of prompt probabilities. Only successful evaluations are
/// ever inserted.
#[derive(Debug, Default)]
pub struct ProbabilityCache {
    entries: RwLock<HashMap<CacheKey, f64>>,
}

impl ProbabilityCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &CacheKey) -> Option<f64> {
        self.entries.read().expect("cache lock").get(key).copied()
    }

    pub fn insert(&self, key: CacheKey, probability: f64) {
        self.entries
            .write()
            .expect("cache lock")
            .insert(key, probability);
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
