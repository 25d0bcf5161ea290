//! Synthetic embedding bundles with planted, spatially clustered glitch tokens.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedstore::{write_model_bundle, EmbeddingMatrix, ModelBundle, StoreError, TokenId, Vocabulary};
use crate::taxonomy::{TokenTypeLabel, WordList};

pub const TRUTH_FILE: &str = "truth.json";
pub const SPEC_FILE: &str = "simspec.json";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation spec: {0}")]
    SpecInvalid(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad truth file {path}: {source}")]
    Truth {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub n: usize,
    pub m: usize,
    pub glitch_count: usize,
    pub cluster_count: usize,
    /// Intra-cluster stddev relative to the global stddev of 1.
    pub cluster_tightness: f64,
    /// Fraction of glitch tokens placed like normal tokens.
    pub scatter_fraction: f64,
    pub seed: u64,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            n: 2000,
            m: 32,
            glitch_count: 200,
            cluster_count: 3,
            cluster_tightness: 0.1,
            scatter_fraction: 0.0,
            seed: 42,
        }
    }
}

impl SimSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::SpecInvalid(msg));
        if self.n == 0 || self.m == 0 {
            return bad(format!("n and m must be positive (n={}, m={})", self.n, self.m));
        }
        if self.glitch_count > self.n {
            return bad(format!("glitch_count {} exceeds n {}", self.glitch_count, self.n));
        }
        if self.glitch_count > 0 && self.cluster_count == 0 {
            return bad("cluster_count must be at least 1 when glitch tokens are planted".into());
        }
        if !(self.cluster_tightness > 0.0 && self.cluster_tightness <= 1.0) {
            return bad(format!("cluster_tightness {} not in (0, 1]", self.cluster_tightness));
        }
        if !(0.0..=1.0).contains(&self.scatter_fraction) {
            return bad(format!("scatter_fraction {} not in [0, 1]", self.scatter_fraction));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimBundle {
    pub bundle: ModelBundle,
    pub planted: BTreeSet<TokenId>,
    /// Members of each planted cluster; scattered glitch tokens are in none.
    pub clusters: Vec<Vec<TokenId>>,
    pub intended_types: Vec<TokenTypeLabel>,
    pub spec: SimSpec,
}

impl SimBundle {
    /// Bundle files plus `truth.json` (sorted planted ids) and the spec echo.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), SimError> {
        let dir = dir.as_ref();
        write_model_bundle(&self.bundle, dir)?;
        let put = |name: &str, body: String| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|source| SimError::Io {
                path: path.display().to_string(),
                source,
            })
        };
        let truth: Vec<TokenId> = self.planted.iter().copied().collect();
        put(TRUTH_FILE, serde_json::to_string(&truth).expect("ids serialize"))?;
        put(SPEC_FILE, serde_json::to_string_pretty(&self.spec).expect("spec serializes"))?;
        Ok(())
    }
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<BTreeSet<TokenId>, SimError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| SimError::Truth {
        path: path.display().to_string(),
        source,
    })
}

const SYMBOLS: &[u8] = b"!\"#$%&()*+,-./:;<=>?@[\\]^_{|}~";
const CONSONANTS: &[u8] = b"bcdfghjklmnpqrstvwxz";
const VOWELS: &[u8] = b"aeiouy";
const ACCENTED: &[char] = &['é', 'ü', 'ñ', 'ø', 'ł', 'ß', 'ç', 'å', 'ž', 'ő'];
const SCRIPTS: &[char] = &['ン', 'ト', 'の', '数', '据', 'г', 'д', 'ж', 'λ', 'ש'];

struct Namer<'a> {
    words: &'a [&'a str],
    dict: &'a WordList,
    used: HashSet<String>,
}

impl Namer<'_> {
    fn pick<T: Copy>(rng: &mut ChaCha8Rng, xs: &[T]) -> T {
        xs[rng.random_range(0..xs.len())]
    }

    fn capitalize(w: &str) -> String {
        let mut c = w.chars();
        c.next()
            .map(|f| f.to_ascii_uppercase().to_string() + c.as_str())
            .unwrap_or_default()
    }

    fn gibberish(rng: &mut ChaCha8Rng, len: usize) -> String {
        (0..len)
            .map(|i| {
                let pool = if i % 2 == 0 { CONSONANTS } else { VOWELS };
                Self::pick(rng, pool) as char
            })
            .collect()
    }

    fn candidate(&self, label: TokenTypeLabel, rng: &mut ChaCha8Rng, attempt: usize) -> String {
        let space = if rng.random_bool(0.3) { " " } else { "" };
        let grow = attempt / 8;
        match label {
            TokenTypeLabel::WordToken => {
                let parts = 2 + grow.min(3) + rng.random_range(0..2);
                let body: String = (0..parts)
                    .map(|_| Self::capitalize(Self::pick(rng, self.words)))
                    .collect();
                format!("{space}{body}")
            }
            TokenTypeLabel::LetterToken => {
                let len = rng.random_range(5..9) + grow;
                let mut s = Self::gibberish(rng, len);
                if rng.random_bool(0.5) {
                    s = Self::capitalize(&s);
                }
                format!("{space}{s}")
            }
            TokenTypeLabel::CharacterToken => {
                let len = rng.random_range(1..4) + grow;
                let body: String = (0..len).map(|_| Self::pick(rng, SYMBOLS) as char).collect();
                format!("{space}{body}")
            }
            TokenTypeLabel::LetterCharacterToken => {
                let word = Self::capitalize(Self::pick(rng, self.words));
                let sym = Self::pick(rng, SYMBOLS) as char;
                let tail = Self::gibberish(rng, grow);
                match rng.random_range(0..3) {
                    0 => format!("{sym}{word}{tail}"),
                    1 => format!("{word}{tail}{sym}"),
                    _ => format!("{word}{sym}{}{tail}", Self::pick(rng, self.words)),
                }
            }
            TokenTypeLabel::SpecialToken => {
                let len = rng.random_range(2..5) + grow;
                let body: String = (0..len)
                    .map(|i| match (i, rng.random_range(0..3)) {
                        (0, _) | (_, 0) => Self::pick(rng, ACCENTED),
                        (_, 1) => Self::pick(rng, SCRIPTS),
                        _ => Self::pick(rng, VOWELS) as char,
                    })
                    .collect();
                format!("{space}{body}")
            }
        }
    }

    fn fresh(&mut self, label: TokenTypeLabel, rng: &mut ChaCha8Rng) -> String {
        for attempt in 0.. {
            let s = self.candidate(label, rng, attempt);
            let fits = crate::taxonomy::classify_token_type(&s, self.dict).is_ok_and(|l| l == label);
            if fits && self.used.insert(s.clone()) {
                return s;
            }
        }
        unreachable!("candidate space grows with attempts")
    }
}

fn gaussian_row(rng: &mut ChaCha8Rng, center: Option<&[f64]>, stddev: f64, m: usize) -> Vec<f32> {
    let normal = Normal::new(0.0, stddev).expect("positive stddev");
    (0..m)
        .map(|j| (center.map_or(0.0, |c| c[j]) + normal.sample(rng)) as f32)
        .collect()
}

pub fn generate(spec: &SimSpec) -> Result<SimBundle, SimError> {
    spec.validate()?;
    let (n, m, g) = (spec.n, spec.m, spec.glitch_count);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut glitch_ids: Vec<TokenId> = index::sample(&mut rng, n, g)
        .into_iter()
        .map(|i| i as TokenId)
        .collect();
    glitch_ids.sort_unstable();
    let planted: BTreeSet<TokenId> = glitch_ids.iter().copied().collect();

    let scattered = (spec.scatter_fraction * g as f64).round() as usize;
    let mut order = glitch_ids.clone();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let c = spec.cluster_count.max(1);
    let mut clusters: Vec<Vec<TokenId>> = vec![Vec::new(); if g > 0 { c } else { 0 }];
    let mut cluster_of: Vec<Option<usize>> = vec![None; n];
    for (i, &id) in order[scattered..].iter().enumerate() {
        clusters[i % c].push(id);
        cluster_of[id as usize] = Some(i % c);
    }
    for members in &mut clusters {
        members.sort_unstable();
    }

    let centers: Vec<Vec<f64>> = (0..clusters.len())
        .map(|_| {
            let unit = Normal::new(0.0, 1.0).expect("unit normal");
            (0..m).map(|_| unit.sample(&mut rng)).collect()
        })
        .collect();
    let mut data = Vec::with_capacity(n * m);
    for slot in &cluster_of {
        let row = match slot {
            Some(ci) => gaussian_row(&mut rng, Some(&centers[*ci]), spec.cluster_tightness, m),
            None => gaussian_row(&mut rng, None, 1.0, m),
        };
        data.extend(row);
    }
    let matrix = EmbeddingMatrix::new(data, n, m)?;

    let dict = WordList::bundled();
    let sorted = dict.sorted();
    let words: Vec<&str> = sorted.iter().copied().filter(|w| w.len() >= 3).collect();
    let mut namer = Namer {
        words: &words,
        dict: &dict,
        used: HashSet::new(),
    };
    let intended_types: Vec<TokenTypeLabel> = (0..n).map(|i| TokenTypeLabel::ALL[i % 5]).collect();
    let strings: Vec<String> = intended_types
        .iter()
        .map(|&label| namer.fresh(label, &mut rng))
        .collect();

    let bundle = ModelBundle::new("simlab", Vocabulary::new(strings), matrix)?;
    Ok(SimBundle {
        bundle,
        planted,
        clusters,
        intended_types,
        spec: spec.clone(),
    })
}
