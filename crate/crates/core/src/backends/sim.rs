//! Seeded synthetic scene that stands in for all five model backends.
//!
//! The world renders a canvas with one planted target object whose pixels
//! carry a distinct chroma. Every backend answer is computed from image
//! content (which pixels still look like the target) plus seeded coins
//! keyed on the call context, so any crop, blend or inpainting of the
//! canvas is interpreted consistently and identical calls always return
//! bit-identical answers.
//!
//! Distractor labels have no pixels. On original-probe score queries a
//! distractor gets weight `magnitude` when its per-(iteration, label) coin
//! lands heads and the floor weight otherwise; counterfactual probes always
//! see the floor. A distractor therefore shows a large contrastive drop in
//! exactly the iterations where its coin fires.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    BackendError, CallContext, Detection, Detector, Inpainter, Label, MaskGenerator, NameAnswer,
    Probe, PromptingVlm, ScoredVocabulary, SemanticScorer,
};
use crate::error::{Error, Result};
use crate::model::{BBox, BinaryMask, Image, SoftMask};

pub const TARGET_RGB: [f64; 3] = [0.75, 0.30, 0.55];
pub const BACKGROUND_RGB: [f64; 3] = [0.35, 0.55, 0.25];

const SALT_RENDER: u64 = 0x01;
const SALT_FLICKER: u64 = 0x02;
const SALT_NAME: u64 = 0x03;
const SALT_HALLUCINATE: u64 = 0x04;
const SALT_BOX: u64 = 0x05;
const SALT_JITTER: u64 = 0x06;
const SALT_SEGMENT: u64 = 0x07;
const SALT_SIMILARITY: u64 = 0x08;
const SALT_SCENARIO: u64 = 0x09;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn key(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(seed), |h, &p| mix(h ^ mix(p)))
}

fn unit(k: u64) -> f64 {
    (k >> 11) as f64 / (1u64 << 53) as f64
}

fn text_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// True when a pixel still carries the target chroma. Uniform scaling of a
/// pixel (masking, blending) does not change the answer.
pub fn is_target_pixel(px: [f64; 3]) -> bool {
    let [r, g, b] = px;
    r > 0.02 && r > 1.6 * g && b > 1.25 * g
}

#[derive(Debug, Clone, PartialEq)]
pub struct Distractor {
    pub label: Label,
    pub flicker_probability: f64,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetShape {
    Rect(BBox),
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    Mask(BinaryMask),
}

impl TargetShape {
    fn rasterize(&self, width: usize, height: usize) -> Result<BinaryMask> {
        match self {
            TargetShape::Rect(b) => BinaryMask::from_box(width, height, *b),
            TargetShape::Ellipse { cx, cy, rx, ry } => {
                let mut m = BinaryMask::empty(width, height)?;
                for y in 0..height {
                    for x in 0..width {
                        let dx = (x as f64 + 0.5 - cx) / rx;
                        let dy = (y as f64 + 0.5 - cy) / ry;
                        if dx * dx + dy * dy <= 1.0 {
                            m.set(x, y, true);
                        }
                    }
                }
                Ok(m)
            }
            TargetShape::Mask(m) => {
                if m.dims() != (width, height) {
                    return Err(Error::DimensionMismatch {
                        expected: (width, height),
                        actual: m.dims(),
                    });
                }
                Ok(m.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub width: usize,
    pub height: usize,
    pub target_label: Label,
    pub background_label: Label,
    pub target: TargetShape,
    /// Pre-softmax weight of a fully visible target.
    pub target_magnitude: f64,
    pub distractors: Vec<Distractor>,
    /// Softmax temperature applied to the weights.
    pub temperature: f64,
    /// Weight of absent labels.
    pub floor: f64,
    /// Probability that a patch showing the target names it correctly.
    pub name_recall: f64,
    /// Fraction of the visible target width covered by box answers, drawn
    /// uniformly per (iteration, patch).
    pub box_coverage: (f64, f64),
    /// Maximum per-edge jitter of detector boxes, in pixels.
    pub detect_jitter: usize,
    /// Probability of dropping a footprint boundary pixel in segmentation.
    pub segment_noise: f64,
    /// Relative brightness texture of the rendered canvas.
    pub texture: f64,
}

impl WorldConfig {
    /// Noiseless world with a rectangular target and no distractors.
    pub fn new(width: usize, height: usize, target_label: Label, target: TargetShape) -> Self {
        Self {
            width,
            height,
            target_label,
            background_label: Label::new("grass").expect("static label"),
            target,
            target_magnitude: 1.0,
            distractors: Vec::new(),
            temperature: 0.1,
            floor: 0.02,
            name_recall: 1.0,
            box_coverage: (1.0, 1.0),
            detect_jitter: 0,
            segment_noise: 0.0,
            texture: 0.1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::TooSmall {
                width: self.width,
                height: self.height,
                reason: "simulated worlds need at least 8x8",
            });
        }
        let unit_checks = [
            ("target magnitude", self.target_magnitude),
            ("floor", self.floor),
            ("name recall", self.name_recall),
            ("box coverage", self.box_coverage.0),
            ("box coverage", self.box_coverage.1),
            ("segment noise", self.segment_noise),
            ("texture", self.texture),
        ];
        for (what, value) in unit_checks {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::OutOfRange { what, value });
            }
        }
        if self.box_coverage.0 > self.box_coverage.1 || self.box_coverage.0 <= 0.0 {
            return Err(Error::Invalid("box coverage must satisfy 0 < lo <= hi".into()));
        }
        if self.temperature <= 0.0 || !self.temperature.is_finite() {
            return Err(Error::OutOfRange {
                what: "temperature",
                value: self.temperature,
            });
        }
        for d in &self.distractors {
            for (what, value) in [
                ("flicker probability", d.flicker_probability),
                ("distractor magnitude", d.magnitude),
            ] {
                if !(0.0..=1.0).contains(&value) {
                    return Err(Error::OutOfRange { what, value });
                }
            }
            if d.label == self.target_label || d.label == self.background_label {
                return Err(Error::Invalid(format!(
                    "distractor label {} collides with target or background",
                    d.label
                )));
            }
        }
        Ok(())
    }
}

/// Ranges from which [`WorldConfig::random`] draws scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioParams {
    pub width: usize,
    pub height: usize,
    pub n_distractors: usize,
    pub flicker_range: (f64, f64),
    /// Distractor magnitude as a fraction of the target magnitude.
    pub magnitude_ratio_range: (f64, f64),
    pub target_magnitude: f64,
    /// Target extent as a fraction of the shorter canvas side.
    pub target_size_range: (f64, f64),
    pub temperature: f64,
    pub floor: f64,
    pub name_recall: f64,
    pub box_coverage: (f64, f64),
    pub detect_jitter: usize,
    pub segment_noise: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            n_distractors: 4,
            flicker_range: (0.2, 0.4),
            magnitude_ratio_range: (0.4, 0.6),
            target_magnitude: 1.0,
            target_size_range: (0.25, 0.5),
            temperature: 0.1,
            floor: 0.02,
            name_recall: 0.7,
            box_coverage: (0.8, 1.0),
            detect_jitter: 0,
            segment_noise: 0.0,
        }
    }
}

const TARGET_POOL: [&str; 6] = ["frog", "lizard", "moth", "crab", "owl", "seahorse"];
const DISTRACTOR_POOL: [&str; 8] = [
    "leaf", "stick", "rock", "moss", "bark", "shadow", "branch", "pebble",
];

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

impl WorldConfig {
    /// Draws a scene from `params`. Same `(seed, params)` → same config.
    pub fn random(seed: u64, params: &ScenarioParams) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(key(seed, &[SALT_SCENARIO]));
        let (w, h) = (params.width, params.height);
        let side = w.min(h) as f64;
        let target_label = Label::new(TARGET_POOL[rng.gen_range(0..TARGET_POOL.len())])?;
        let tw = (draw(&mut rng, params.target_size_range) * side).round().max(2.0) as usize;
        let th = (draw(&mut rng, params.target_size_range) * side).round().max(2.0) as usize;
        let (tw, th) = (tw.min(w - 1), th.min(h - 1));
        let x0 = rng.gen_range(0..=w - tw);
        let y0 = rng.gen_range(0..=h - th);
        let target = if rng.gen_bool(0.5) {
            TargetShape::Rect(BBox::new(x0, y0, x0 + tw, y0 + th)?)
        } else {
            TargetShape::Ellipse {
                cx: x0 as f64 + tw as f64 / 2.0,
                cy: y0 as f64 + th as f64 / 2.0,
                rx: tw as f64 / 2.0,
                ry: th as f64 / 2.0,
            }
        };
        let mut pool: Vec<&str> = DISTRACTOR_POOL.to_vec();
        let mut distractors = Vec::new();
        for _ in 0..params.n_distractors.min(pool.len()) {
            let name = pool.remove(rng.gen_range(0..pool.len()));
            distractors.push(Distractor {
                label: Label::new(name)?,
                flicker_probability: draw(&mut rng, params.flicker_range),
                magnitude: (draw(&mut rng, params.magnitude_ratio_range) * params.target_magnitude)
                    .clamp(0.0, 1.0),
            });
        }
        Ok(Self {
            width: w,
            height: h,
            target_label,
            background_label: Label::new("grass")?,
            target,
            target_magnitude: params.target_magnitude,
            distractors,
            temperature: params.temperature,
            floor: params.floor,
            name_recall: params.name_recall,
            box_coverage: params.box_coverage,
            detect_jitter: params.detect_jitter,
            segment_noise: params.segment_noise,
            texture: 0.1,
        })
    }
}

/// A rendered synthetic scene plus the oracle behind every simulated backend.
#[derive(Debug, Clone)]
pub struct SimulatedWorld {
    config: WorldConfig,
    seed: u64,
    canvas: Image,
    target_region: BinaryMask,
    target_area: usize,
}

impl SimulatedWorld {
    pub fn new(config: WorldConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let target_region = config.target.rasterize(config.width, config.height)?;
        let target_area = target_region.count();
        if target_area == 0 {
            return Err(Error::Empty("target region"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(key(seed, &[SALT_RENDER]));
        let mut canvas = Image::filled(config.width, config.height, [0.0; 3])?;
        for y in 0..config.height {
            for x in 0..config.width {
                let base = if target_region.get(x, y) {
                    TARGET_RGB
                } else {
                    BACKGROUND_RGB
                };
                let f = 1.0 + config.texture * rng.gen_range(-1.0..=1.0);
                canvas.set_pixel(x, y, base.map(|c| c * f));
            }
        }
        Ok(Self {
            config,
            seed,
            canvas,
            target_region,
            target_area,
        })
    }

    /// Adopts an existing image, taking every target-chroma pixel as the
    /// planted object. Used to run the simulated backends on images that
    /// were rendered earlier and stored on disk.
    pub fn from_image(image: &Image, mut config: WorldConfig, seed: u64) -> Result<Self> {
        let (w, h) = image.dims();
        let region = classify(image);
        config.width = w;
        config.height = h;
        config.target = TargetShape::Mask(region.clone());
        config.validate()?;
        let target_area = region.count();
        if target_area == 0 {
            return Err(Error::Empty("target region"));
        }
        Ok(Self {
            config,
            seed,
            canvas: image.clone(),
            target_region: region,
            target_area,
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn canvas(&self) -> &Image {
        &self.canvas
    }

    pub fn target_region(&self) -> &BinaryMask {
        &self.target_region
    }

    pub fn target_label(&self) -> &Label {
        &self.config.target_label
    }

    fn coin(&self, parts: &[u64]) -> f64 {
        unit(key(self.seed, parts))
    }

    fn visible_fraction(&self, footprint: &BinaryMask) -> f64 {
        (footprint.count() as f64 / self.target_area as f64).min(1.0)
    }

    /// Whether distractor `d` flickers on in `iteration`.
    fn fires(&self, iteration: usize, d: &Distractor) -> bool {
        self.coin(&[SALT_FLICKER, iteration as u64, text_hash(d.label.as_str())])
            < d.flicker_probability
    }

    fn label_weight(&self, ctx: CallContext, label: &Label, visible: f64) -> f64 {
        let c = &self.config;
        if *label == c.target_label {
            return (c.target_magnitude * visible).max(c.floor);
        }
        match c.distractors.iter().find(|d| d.label == *label) {
            Some(d) if ctx.probe == Probe::Original && self.fires(ctx.iteration, d) => d.magnitude,
            _ => c.floor,
        }
    }

    fn hallucinated_label(&self, ctx: CallContext) -> String {
        let c = &self.config;
        if c.distractors.is_empty() {
            return c.background_label.to_string();
        }
        let pick = key(
            self.seed,
            &[SALT_HALLUCINATE, ctx.iteration as u64, ctx.patch_id as u64],
        );
        c.distractors[(pick % c.distractors.len() as u64) as usize]
            .label
            .to_string()
    }
}

fn classify(view: &Image) -> BinaryMask {
    let (w, h) = view.dims();
    let data = (0..w * h)
        .map(|i| is_target_pixel(view.pixel(i % w, i / w)))
        .collect();
    BinaryMask::new(w, h, data).expect("dimensions come from an image")
}

fn decorate(label: &str) -> String {
    let mut chars = label.chars();
    match chars.next() {
        Some(first) => format!("{}{}.", first.to_uppercase(), chars.as_str()),
        None => String::new(),
    }
}

impl PromptingVlm for SimulatedWorld {
    fn caption(&self, _: CallContext, view: &Image) -> Result<String, BackendError> {
        let visible = classify(view).count();
        Ok(if visible > 0 {
            format!("a {} scene with something hidden", self.config.background_label)
        } else {
            format!("a {} scene", self.config.background_label)
        })
    }

    fn name_query(
        &self,
        ctx: CallContext,
        view: &Image,
        _caption: &str,
        _prompt: &str,
    ) -> Result<NameAnswer, BackendError> {
        let visible = classify(view).count() > 0;
        let hit = self.coin(&[SALT_NAME, ctx.iteration as u64, ctx.patch_id as u64])
            < self.config.name_recall;
        let fore = if visible && hit {
            self.config.target_label.to_string()
        } else {
            self.hallucinated_label(ctx)
        };
        Ok(NameAnswer {
            fore: decorate(&fore),
            back: self.config.background_label.to_string(),
        })
    }

    fn box_query(
        &self,
        ctx: CallContext,
        view: &Image,
        _caption: &str,
        _prompt: &str,
    ) -> Result<Vec<BBox>, BackendError> {
        let (w, h) = view.dims();
        let mut rng = ChaCha8Rng::seed_from_u64(key(
            self.seed,
            &[SALT_BOX, ctx.iteration as u64, ctx.patch_id as u64],
        ));
        if let Some(tight) = classify(view).bounding_box() {
            let coverage = draw(&mut rng, self.config.box_coverage);
            let keep = ((tight.width() as f64 * coverage).round() as usize).clamp(1, tight.width());
            let b = if rng.gen_bool(0.5) {
                BBox { x_max: tight.x_min + keep, ..tight }
            } else {
                BBox { x_min: tight.x_max - keep, ..tight }
            };
            return Ok(vec![b]);
        }
        let bw = rng.gen_range((w / 8).max(1)..=(w / 3).max(1));
        let bh = rng.gen_range((h / 8).max(1)..=(h / 3).max(1));
        let x0 = rng.gen_range(0..=w - bw);
        let y0 = rng.gen_range(0..=h - bh);
        Ok(vec![BBox {
            x_min: x0,
            y_min: y0,
            x_max: x0 + bw,
            y_max: y0 + bh,
        }])
    }

    fn score_query(
        &self,
        ctx: CallContext,
        view: &Image,
        vocabulary: &[Label],
    ) -> Result<ScoredVocabulary, BackendError> {
        if vocabulary.is_empty() {
            return Err(BackendError::InvalidInput("empty vocabulary".into()));
        }
        let visible = self.visible_fraction(&classify(view));
        let logits: Vec<f64> = vocabulary
            .iter()
            .map(|l| self.label_weight(ctx, l, visible) / self.config.temperature)
            .collect();
        ScoredVocabulary::softmax(vocabulary, &logits)
            .map_err(|e| BackendError::Failed(e.to_string()))
    }
}

impl Inpainter for SimulatedWorld {
    fn inpaint(
        &self,
        _: CallContext,
        view: &Image,
        region: &BinaryMask,
        _positive_prompt: &str,
        _negative_prompt: &str,
    ) -> Result<Image, BackendError> {
        if region.dims() != view.dims() {
            return Err(BackendError::InvalidInput(format!(
                "region {:?} does not match view {:?}",
                region.dims(),
                view.dims()
            )));
        }
        let mut out = view.clone();
        for y in 0..view.height() {
            for x in 0..view.width() {
                if region.get(x, y) {
                    out.set_pixel(x, y, BACKGROUND_RGB);
                }
            }
        }
        Ok(out)
    }
}

impl Detector for SimulatedWorld {
    fn detect(
        &self,
        ctx: CallContext,
        view: &Image,
        label: &Label,
    ) -> Result<Vec<Detection>, BackendError> {
        if *label != self.config.target_label {
            return Ok(Vec::new());
        }
        let footprint = classify(view);
        let Some(tight) = footprint.bounding_box() else {
            return Ok(Vec::new());
        };
        let j = self.config.detect_jitter as i64;
        let bbox = if j == 0 {
            tight
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(key(
                self.seed,
                &[SALT_JITTER, ctx.iteration as u64, ctx.patch_id as u64],
            ));
            let mut shift = |v: usize, hi: usize| -> usize {
                (v as i64 + rng.gen_range(-j..=j)).clamp(0, hi as i64) as usize
            };
            let (w, h) = view.dims();
            let x0 = shift(tight.x_min, w - 1);
            let y0 = shift(tight.y_min, h - 1);
            let x1 = shift(tight.x_max, w).max(x0 + 1);
            let y1 = shift(tight.y_max, h).max(y0 + 1);
            BBox {
                x_min: x0,
                y_min: y0,
                x_max: x1,
                y_max: y1,
            }
        };
        Ok(vec![Detection {
            bbox,
            confidence: self.visible_fraction(&footprint),
        }])
    }
}

impl MaskGenerator for SimulatedWorld {
    fn segment(
        &self,
        ctx: CallContext,
        view: &Image,
        points: &[(usize, usize)],
        bbox: BBox,
    ) -> Result<SoftMask, BackendError> {
        let (w, h) = view.dims();
        bbox.validate_in(w, h)
            .map_err(|e| BackendError::InvalidInput(e.to_string()))?;
        let footprint = classify(view);
        let anchored = points
            .iter()
            .any(|&(x, y)| x < w && y < h && footprint.get(x, y))
            && (bbox.y_min..bbox.y_max)
                .any(|y| (bbox.x_min..bbox.x_max).any(|x| footprint.get(x, y)));
        let mut mask = SoftMask::zeros(w, h).expect("view has pixels");
        if !anchored {
            for y in bbox.y_min..bbox.y_max {
                for x in bbox.x_min..bbox.x_max {
                    mask.set(x, y, 0.5);
                }
            }
            return Ok(mask);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(key(
            self.seed,
            &[SALT_SEGMENT, ctx.iteration as u64, ctx.patch_id as u64],
        ));
        for y in bbox.y_min..bbox.y_max {
            for x in bbox.x_min..bbox.x_max {
                if !footprint.get(x, y) {
                    continue;
                }
                let boundary = x == 0
                    || y == 0
                    || x + 1 == w
                    || y + 1 == h
                    || !footprint.get(x - 1, y)
                    || !footprint.get(x + 1, y)
                    || !footprint.get(x, y - 1)
                    || !footprint.get(x, y + 1);
                let dropped = self.config.segment_noise > 0.0
                    && boundary
                    && rng.gen_bool(self.config.segment_noise);
                if !dropped {
                    mask.set(x, y, 1.0);
                }
            }
        }
        Ok(mask)
    }
}

impl SemanticScorer for SimulatedWorld {
    /// For the target label: IoU between the view's nonzero support and
    /// the target. Canvas-sized views are compared with the planted region,
    /// other views with their own target-chroma pixels.
    fn similarity(&self, _: CallContext, view: &Image, label: &Label) -> Result<f64, BackendError> {
        if *label != self.config.target_label {
            return Ok(0.2 * self.coin(&[SALT_SIMILARITY, text_hash(label.as_str())]));
        }
        let (w, h) = view.dims();
        let footprint = if view.dims() == self.canvas.dims() {
            self.target_region.clone()
        } else {
            classify(view)
        };
        let (mut inter, mut union) = (0usize, 0usize);
        for y in 0..h {
            for x in 0..w {
                let support = view.pixel(x, y).iter().any(|&c| c > 0.0);
                let target = footprint.get(x, y);
                inter += usize::from(support && target);
                union += usize::from(support || target);
            }
        }
        Ok(if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        })
    }

    fn heatmap(&self, _: CallContext, view: &Image, label: &Label) -> Result<SoftMask, BackendError> {
        let (w, h) = view.dims();
        let mut map = SoftMask::zeros(w, h).expect("view has pixels");
        if *label != self.config.target_label {
            return Ok(map);
        }
        let footprint = classify(view);
        let n = footprint.count();
        if n == 0 {
            return Ok(map);
        }
        let (mut sx, mut sy) = (0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                if footprint.get(x, y) {
                    sx += x as f64;
                    sy += y as f64;
                }
            }
        }
        let (cx, cy) = (sx / n as f64, sy / n as f64);
        let radius = w.max(h) as f64;
        for y in 0..h {
            for x in 0..w {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                map.set(x, y, (1.0 - d / radius).max(0.0));
            }
        }
        Ok(map)
    }
}
