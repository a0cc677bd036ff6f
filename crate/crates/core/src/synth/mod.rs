//! Deterministic synthetic screens built from six layout templates, and a
//! brute-force reference search used to check the query engine.

mod oracle;
mod queries;

pub use oracle::{oracle_search, OracleCorpus, OracleHit, OracleScreen};
pub use queries::{random_hybrid_query, random_predicate};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::graph::{BBox, Detection, DetectionManifest, ElementType};
use crate::rng::{hash_bytes, hash_words, seeded};

/// Intent labels in template order.
pub const INTENTS: [&str; 6] = ["login", "checkout", "dashboard", "settings", "search-results", "data-entry"];

const FIXTURES: [&str; 6] = [
    include_str!("../../fixtures/templates/login.json"),
    include_str!("../../fixtures/templates/checkout.json"),
    include_str!("../../fixtures/templates/dashboard.json"),
    include_str!("../../fixtures/templates/settings.json"),
    include_str!("../../fixtures/templates/search-results.json"),
    include_str!("../../fixtures/templates/data-entry.json"),
];

/// Width of generated visual vectors.
pub const VISUAL_DIM: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Jitter {
    pub position_sigma: f64,
    pub drop_prob: f64,
    pub decoration_prob: f64,
}

impl Jitter {
    pub const NONE: Jitter = Jitter { position_sigma: 0.0, drop_prob: 0.0, decoration_prob: 0.0 };

    fn is_none(&self) -> bool {
        *self == Jitter::NONE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    #[serde(rename = "type")]
    pub elem_type: ElementType,
    pub bbox: [f64; 4],
    pub count: u32,
    pub count_range: [u32; 2],
    #[serde(default)]
    pub step: [f64; 2],
    #[serde(default)]
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSpec {
    pub intent: String,
    pub width: f64,
    pub height: f64,
    pub jitter: Jitter,
    pub decorations: Vec<ElementType>,
    pub regions: Vec<Region>,
}

impl TemplateSpec {
    /// The six built-in templates, in [`INTENTS`] order.
    pub fn builtin() -> Vec<TemplateSpec> {
        FIXTURES.iter().map(|s| serde_json::from_str(s).expect("bundled template fixture")).collect()
    }

    pub fn by_intent(intent: &str) -> Option<TemplateSpec> {
        Self::builtin().into_iter().find(|t| t.intent == intent)
    }

    pub fn with_jitter(mut self, jitter: Jitter) -> Self {
        self.jitter = jitter;
        self
    }

    /// The noise-free layout: every region at its default count.
    pub fn prototype(&self, screen_id: &str) -> DetectionManifest {
        let mut elements = Vec::new();
        for r in &self.regions {
            for i in 0..r.count {
                elements.push(self.place(r, i, r.bbox_at(i), 1.0));
            }
        }
        DetectionManifest {
            screen_id: screen_id.to_string(),
            width: self.width,
            height: self.height,
            elements,
            visual_vec: None,
            intent_label: Some(self.intent.clone()),
        }
    }

    fn place(&self, r: &Region, copy: u32, bbox: BBox, confidence: f64) -> Detection {
        let text = (!r.texts.is_empty()).then(|| r.texts[copy as usize % r.texts.len()].clone());
        Detection { elem_type: r.elem_type, bbox, confidence, text }
    }

    fn clamp(&self, x0: f64, y0: f64, w: f64, h: f64) -> BBox {
        let w = w.clamp(4.0, self.width);
        let h = h.clamp(4.0, self.height);
        let x0 = x0.clamp(0.0, self.width - w);
        let y0 = y0.clamp(0.0, self.height - h);
        BBox::new(x0, y0, x0 + w, y0 + h)
    }

    fn jittered(&self, rng: &mut ChaCha8Rng, screen_id: &str, with_visual: bool) -> DetectionManifest {
        if self.jitter.is_none() {
            let mut m = self.prototype(screen_id);
            m.visual_vec = with_visual.then(|| visual_vector(&self.intent, rng));
            return m;
        }
        let j = self.jitter;
        let nx = Normal::new(0.0, j.position_sigma * self.width).expect("finite sigma");
        let ny = Normal::new(0.0, j.position_sigma * self.height).expect("finite sigma");
        let mut elements = Vec::new();
        for r in &self.regions {
            let count = rng.random_range(r.count_range[0]..=r.count_range[1]);
            for i in 0..count {
                if rng.random_bool(j.drop_prob) {
                    continue;
                }
                let b = r.bbox_at(i);
                let bbox = if r.elem_type == ElementType::Window {
                    b
                } else {
                    self.clamp(
                        b.x_min + nx.sample(rng),
                        b.y_min + ny.sample(rng),
                        b.width() + nx.sample(rng) * 0.5,
                        b.height() + ny.sample(rng) * 0.25,
                    )
                };
                elements.push(self.place(r, i, bbox, rng.random_range(0.6..1.0)));
            }
        }
        if !self.decorations.is_empty() && rng.random_bool(j.decoration_prob) {
            let t = self.decorations[rng.random_range(0..self.decorations.len())];
            let (w, h) = (rng.random_range(24.0..160.0), rng.random_range(20.0..48.0));
            let bbox = self.clamp(rng.random_range(0.0..self.width), rng.random_range(0.0..self.height), w, h);
            elements.push(Detection { elem_type: t, bbox, confidence: rng.random_range(0.6..1.0), text: None });
        }
        DetectionManifest {
            screen_id: screen_id.to_string(),
            width: self.width,
            height: self.height,
            elements,
            visual_vec: with_visual.then(|| visual_vector(&self.intent, rng)),
            intent_label: Some(self.intent.clone()),
        }
    }
}

impl Region {
    fn bbox_at(&self, copy: u32) -> BBox {
        let [x0, y0, x1, y1] = self.bbox;
        let (dx, dy) = (self.step[0] * copy as f64, self.step[1] * copy as f64);
        BBox::new(x0 + dx, y0 + dy, x1 + dx, y1 + dy)
    }
}

/// Template direction plus isotropic noise, unit length.
fn visual_vector(intent: &str, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut base = seeded(hash_bytes(0x5eed, intent.as_bytes()));
    let noise = Normal::new(0.0, 0.6).expect("finite sigma");
    let v: Vec<f64> = (0..VISUAL_DIM)
        .map(|_| {
            let b: f64 = base.sample(rand_distr::StandardNormal);
            b + noise.sample(rng)
        })
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / norm) as f32).collect()
}

/// Options for corpus generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub visual: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { seed: 0, visual: true }
    }
}

/// `n` screens from one template, with ids `{intent}-{i:05}`.
pub fn generate(spec: &TemplateSpec, n: usize, cfg: SynthConfig) -> Vec<DetectionManifest> {
    (0..n).map(|i| generate_one(spec, i, cfg)).collect()
}

fn generate_one(spec: &TemplateSpec, i: usize, cfg: SynthConfig) -> DetectionManifest {
    let mut rng = seeded(hash_words(&[cfg.seed, hash_bytes(0, spec.intent.as_bytes()), i as u64]));
    spec.jittered(&mut rng, &format!("{}-{i:05}", spec.intent), cfg.visual)
}

/// `per_template` screens from each built-in template, interleaved so any
/// prefix is balanced across intents.
pub fn generate_corpus(per_template: usize, cfg: SynthConfig) -> Vec<DetectionManifest> {
    let templates = TemplateSpec::builtin();
    (0..per_template)
        .flat_map(|i| templates.iter().map(move |t| (t, i)))
        .map(|(t, i)| generate_one(t, i, cfg))
        .collect()
}

/// A corpus of exactly `n` screens, cycling through the templates.
pub fn generate_n(n: usize, cfg: SynthConfig) -> Vec<DetectionManifest> {
    let templates = TemplateSpec::builtin();
    (0..n).map(|k| generate_one(&templates[k % 6], k / 6, cfg)).collect()
}
