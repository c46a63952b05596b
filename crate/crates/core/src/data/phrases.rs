//! Affordance phrase bank, organized by the four description perspectives.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Perspective {
    Action,
    Function,
    Appearance,
    Environment,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Perspectives {
    pub action: Vec<String>,
    pub function: Vec<String>,
    pub appearance: Vec<String>,
    pub environment: Vec<String>,
}

impl Perspectives {
    pub fn get(&self, p: Perspective) -> &[String] {
        match p {
            Perspective::Action => &self.action,
            Perspective::Function => &self.function,
            Perspective::Appearance => &self.appearance,
            Perspective::Environment => &self.environment,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &String> {
        self.action
            .iter()
            .chain(&self.function)
            .chain(&self.appearance)
            .chain(&self.environment)
    }

    pub fn len(&self) -> usize {
        self.all().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseBank {
    pub affordances: BTreeMap<String, Perspectives>,
}

fn strs(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl PhraseBank {
    /// Hand-written bank for the six synthetic affordance classes.
    ///
    /// Every class has one action phrase of its own and two shared with a
    /// neighbouring class (classes form a ring), so a single action phrase
    /// is often ambiguous while a set of four phrases is not.
    pub fn toy() -> Self {
        let entry = |action: &[&str],
                     function: &[&str],
                     appearance: &[&str],
                     environment: &[&str]| Perspectives {
            action: strs(action),
            function: strs(function),
            appearance: strs(appearance),
            environment: strs(environment),
        };
        let mut a = BTreeMap::new();
        a.insert(
            "roll".to_string(),
            entry(
                &["roll over", "move freely", "carry along"],
                &["move by rotating", "travel on ground"],
                &["spherical", "round body"],
                &["outdoor activities"],
            ),
        );
        a.insert(
            "contain".to_string(),
            entry(
                &["fill up", "carry along", "prepare food"],
                &["hold liquid", "keep things inside"],
                &["hollow inside", "open rim"],
                &["dining table"],
            ),
        );
        a.insert(
            "cut".to_string(),
            entry(
                &["slice through", "prepare food", "grip firmly"],
                &["separate material", "divide into pieces"],
                &["sharp edge", "long thin blade"],
                &["cutting board"],
            ),
        );
        a.insert(
            "stack".to_string(),
            entry(
                &["pile up", "grip firmly", "put on top"],
                &["build upward", "save floor space"],
                &["flat surface", "square corners"],
                &["storage room"],
            ),
        );
        a.insert(
            "support".to_string(),
            entry(
                &["sit on", "put on top", "bear weight"],
                &["hold things up", "keep steady"],
                &["wide base", "pointed top"],
                &["living room"],
            ),
        );
        a.insert(
            "hang".to_string(),
            entry(
                &["hang up", "bear weight", "move freely"],
                &["suspend objects", "keep off floor"],
                &["crossed arms", "hooked end"],
                &["closet wall"],
            ),
        );
        PhraseBank { affordances: a }
    }

    pub fn validate(&self) -> Result<()> {
        if self.affordances.is_empty() {
            return Err(Error::Validation("phrase bank has no affordances".into()));
        }
        for (name, p) in &self.affordances {
            if p.len() < 4 {
                return Err(Error::Validation(format!(
                    "affordance {name} has fewer than 4 phrases"
                )));
            }
            if p.action.is_empty() {
                return Err(Error::Validation(format!(
                    "affordance {name} has no action phrase"
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, affordance: &str) -> Result<&Perspectives> {
        self.affordances
            .get(affordance)
            .ok_or_else(|| Error::Validation(format!("unknown affordance {affordance:?}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.affordances.keys().map(String::as_str)
    }

    pub fn all_phrases(&self) -> impl Iterator<Item = &str> {
        self.affordances
            .values()
            .flat_map(|p| p.all())
            .map(String::as_str)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bank: PhraseBank = serde_json::from_str(&text)?;
        bank.validate()?;
        Ok(bank)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Draw `n` distinct phrases for `affordance` without replacement. The first
/// phrase is always from the action perspective; the rest are a uniform
/// sample of everything else.
pub fn phrase_sample<R: Rng>(
    bank: &PhraseBank,
    affordance: &str,
    n: usize,
    rng: &mut R,
) -> Result<Vec<String>> {
    let p = bank.get(affordance)?;
    let mut distinct: Vec<&String> = p.all().collect();
    distinct.sort();
    distinct.dedup();
    if n == 0 || n > distinct.len() {
        return Err(Error::Validation(format!(
            "cannot draw {n} phrases for {affordance}: {} available",
            distinct.len()
        )));
    }
    let first = p.action.choose(rng).ok_or_else(|| {
        Error::Validation(format!("affordance {affordance} has no action phrase"))
    })?;
    let mut rest: Vec<&String> = distinct.into_iter().filter(|s| *s != first).collect();
    rest.shuffle(rng);
    let mut out = vec![first.clone()];
    out.extend(rest.into_iter().take(n - 1).cloned());
    Ok(out)
}
