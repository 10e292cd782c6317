use crate::blocks::{DenseBlockSpec, LgcfSpec};
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::tensor::DType;

/// Downsampling factors of the five decoder outputs, coarse to fine.
pub const DECODER_SCALES: [usize; 5] = [16, 8, 4, 2, 1];

/// Downsampling factor of the cost volume.
pub const COST_SCALE: usize = 4;

/// Input height and width must be multiples of this.
pub const INPUT_MULTIPLE: usize = 16;

/// Every architectural hyperparameter. Widths are channel counts.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    /// Width of the half-resolution feature blocks.
    pub base_width: usize,
    /// Width of the quarter-resolution features fed to the cost volume.
    pub feature_width: usize,
    pub res_blocks_half: usize,
    pub res_blocks_quarter: usize,
    pub growth: usize,
    /// Entry-conv width of each of the three encoder blocks.
    pub encoder_widths: Vec<usize>,
    /// Dilation schedule per encoder block, used when `use_dilations`.
    pub encoder_dilations: Vec<Vec<usize>>,
    pub bottleneck_layers: usize,
    /// Decoder widths, coarse (1/16) to fine (1/1).
    pub decoder_widths: Vec<usize>,
    /// Disparity levels of the cost volume (at quarter resolution).
    pub max_disparity: usize,
    pub lgcf_dilations: Vec<usize>,
    pub spp_kernels: Vec<usize>,
    pub fusion_width: usize,
    pub refine_widths: Vec<usize>,
    pub use_dilations: bool,
    pub use_lgcf: bool,
    pub use_refinement: bool,
    /// Disparity heads predict in units of this many pixels.
    pub disparity_scale: f64,
    pub elu_alpha: f64,
    pub seed: u64,
    pub precision: DType,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 1,
            base_width: 16,
            feature_width: 32,
            res_blocks_half: 4,
            res_blocks_quarter: 8,
            growth: 8,
            encoder_widths: vec![32, 48, 64],
            encoder_dilations: vec![vec![1, 3, 6, 8]; 3],
            bottleneck_layers: 4,
            decoder_widths: vec![64, 48, 32, 16, 8],
            max_disparity: 16,
            lgcf_dilations: vec![1, 3, 6, 12, 18, 24],
            spp_kernels: vec![8, 16, 32, 64],
            fusion_width: 32,
            refine_widths: vec![16, 32, 32],
            use_dilations: true,
            use_lgcf: true,
            use_refinement: true,
            disparity_scale: 8.0,
            elu_alpha: 1.0,
            seed: 0,
            precision: DType::F32,
        }
    }
}

/// The four ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Baseline,
    Dilations,
    DilationsContext,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::Dilations, Variant::DilationsContext, Variant::Full];

    pub fn switches(self) -> (bool, bool, bool) {
        match self {
            Variant::Baseline => (false, false, false),
            Variant::Dilations => (true, false, false),
            Variant::DilationsContext => (true, true, false),
            Variant::Full => (true, true, true),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Dilations => "baseline+dilations",
            Variant::DilationsContext => "baseline+dilations+context",
            Variant::Full => "full",
        }
    }
}

impl ModelConfig {
    /// Desk-scale model trained by the acceptance experiments.
    pub fn tiny() -> Self {
        ModelConfig { res_blocks_half: 2, res_blocks_quarter: 4, ..Self::default() }
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        (self.use_dilations, self.use_lgcf, self.use_refinement) = v.switches();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("in_channels", self.in_channels),
            ("base_width", self.base_width),
            ("feature_width", self.feature_width),
            ("growth", self.growth),
            ("max_disparity", self.max_disparity),
            ("fusion_width", self.fusion_width),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("model.{name} must be positive")));
        }
        if self.encoder_widths.len() != 3 || self.encoder_widths.contains(&0) {
            return Err(Error::config("model.encoder_widths needs three positive entries"));
        }
        if self.encoder_dilations.len() != 3 || self.encoder_dilations.iter().any(|s| s.is_empty() || s.contains(&0)) {
            return Err(Error::config("model.encoder_dilations needs three non-empty schedules of positive rates"));
        }
        if self.decoder_widths.len() != DECODER_SCALES.len() || self.decoder_widths.contains(&0) {
            return Err(Error::config("model.decoder_widths needs five positive entries"));
        }
        if self.refine_widths.len() != 3 || self.refine_widths.contains(&0) {
            return Err(Error::config("model.refine_widths needs three positive entries"));
        }
        if self.lgcf_dilations.is_empty() || self.lgcf_dilations.contains(&0) {
            return Err(Error::config("model.lgcf_dilations must be non-empty positive rates"));
        }
        if self.spp_kernels.is_empty() || self.spp_kernels.contains(&0) {
            return Err(Error::config("model.spp_kernels must be non-empty positive sizes"));
        }
        if self.res_blocks_quarter == 0 {
            return Err(Error::config("model.res_blocks_quarter must be at least 1 (it downsamples)"));
        }
        if self.bottleneck_layers == 0 {
            return Err(Error::config("model.bottleneck_layers must be positive"));
        }
        if !(self.disparity_scale > 0.0 && self.disparity_scale.is_finite()) {
            return Err(Error::config("model.disparity_scale must be positive"));
        }
        if !(self.elu_alpha > 0.0 && self.elu_alpha.is_finite()) {
            return Err(Error::config("model.elu_alpha must be positive"));
        }
        if !DECODER_SCALES.windows(2).all(|w| w[0] > w[1]) || DECODER_SCALES[4] != 1 {
            return Err(Error::config("decoder scales must increase in resolution and end at full size"));
        }
        Ok(())
    }

    /// Dilation schedule the given encoder block actually uses.
    pub fn encoder_schedule(&self, stage: usize) -> Vec<usize> {
        let s = &self.encoder_dilations[stage];
        if self.use_dilations {
            s.clone()
        } else {
            vec![1; s.len()]
        }
    }

    pub fn encoder_block(&self, stage: usize) -> DenseBlockSpec {
        DenseBlockSpec::new(self.encoder_widths[stage], self.growth, self.encoder_schedule(stage))
    }

    pub fn lgcf_spec(&self) -> LgcfSpec {
        LgcfSpec {
            dense: DenseBlockSpec::new(self.feature_width, self.growth, self.lgcf_dilations.clone()),
            pool_kernels: self.spp_kernels.clone(),
            fusion_channels: self.fusion_width,
        }
    }

    /// Channels of the estimation-network input.
    pub fn cost_input_channels(&self) -> usize {
        self.max_disparity + self.feature_width
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("in_channels", self.in_channels);
        kv.set("base_width", self.base_width);
        kv.set("feature_width", self.feature_width);
        kv.set("res_blocks_half", self.res_blocks_half);
        kv.set("res_blocks_quarter", self.res_blocks_quarter);
        kv.set("growth", self.growth);
        kv.set_list("encoder_widths", &self.encoder_widths);
        for (i, s) in self.encoder_dilations.iter().enumerate() {
            kv.set_list(format!("encoder{}_dilations", i + 1), s);
        }
        kv.set("bottleneck_layers", self.bottleneck_layers);
        kv.set_list("decoder_widths", &self.decoder_widths);
        kv.set("max_disparity", self.max_disparity);
        kv.set_list("lgcf_dilations", &self.lgcf_dilations);
        kv.set_list("spp_kernels", &self.spp_kernels);
        kv.set("fusion_width", self.fusion_width);
        kv.set_list("refine_widths", &self.refine_widths);
        kv.set("use_dilations", self.use_dilations);
        kv.set("use_lgcf", self.use_lgcf);
        kv.set("use_refinement", self.use_refinement);
        kv.set("disparity_scale", self.disparity_scale);
        kv.set("elu_alpha", self.elu_alpha);
        kv.set("seed", self.seed);
        kv.set("precision", self.precision.name());
        kv
    }

    /// Read from a `model.`-stripped section; absent keys keep `base` values.
    pub fn from_kv(kv: &KvMap, base: ModelConfig) -> Result<Self> {
        const KNOWN: [&str; 25] = [
            "in_channels",
            "base_width",
            "feature_width",
            "res_blocks_half",
            "res_blocks_quarter",
            "growth",
            "encoder_widths",
            "encoder1_dilations",
            "encoder2_dilations",
            "encoder3_dilations",
            "bottleneck_layers",
            "decoder_widths",
            "max_disparity",
            "lgcf_dilations",
            "spp_kernels",
            "fusion_width",
            "refine_widths",
            "use_dilations",
            "use_lgcf",
            "use_refinement",
            "disparity_scale",
            "elu_alpha",
            "seed",
            "precision",
            "variant",
        ];
        if let Some(k) = kv.unknown_keys("", &KNOWN).first() {
            return Err(Error::config(format!("unknown model key {k}")));
        }
        let mut c = base;
        if let Some(v) = kv.raw("variant") {
            let variant = Variant::ALL
                .into_iter()
                .find(|x| x.name() == v)
                .ok_or_else(|| Error::config(format!("unknown variant {v:?}")))?;
            c = c.with_variant(variant);
        }
        c.in_channels = kv.get_or("in_channels", c.in_channels)?;
        c.base_width = kv.get_or("base_width", c.base_width)?;
        c.feature_width = kv.get_or("feature_width", c.feature_width)?;
        c.res_blocks_half = kv.get_or("res_blocks_half", c.res_blocks_half)?;
        c.res_blocks_quarter = kv.get_or("res_blocks_quarter", c.res_blocks_quarter)?;
        c.growth = kv.get_or("growth", c.growth)?;
        c.encoder_widths = kv.get_list("encoder_widths")?.unwrap_or(c.encoder_widths);
        for i in 0..3 {
            if let Some(s) = kv.get_list(&format!("encoder{}_dilations", i + 1))? {
                c.encoder_dilations[i] = s;
            }
        }
        c.bottleneck_layers = kv.get_or("bottleneck_layers", c.bottleneck_layers)?;
        c.decoder_widths = kv.get_list("decoder_widths")?.unwrap_or(c.decoder_widths);
        c.max_disparity = kv.get_or("max_disparity", c.max_disparity)?;
        c.lgcf_dilations = kv.get_list("lgcf_dilations")?.unwrap_or(c.lgcf_dilations);
        c.spp_kernels = kv.get_list("spp_kernels")?.unwrap_or(c.spp_kernels);
        c.fusion_width = kv.get_or("fusion_width", c.fusion_width)?;
        c.refine_widths = kv.get_list("refine_widths")?.unwrap_or(c.refine_widths);
        c.use_dilations = kv.get_or("use_dilations", c.use_dilations)?;
        c.use_lgcf = kv.get_or("use_lgcf", c.use_lgcf)?;
        c.use_refinement = kv.get_or("use_refinement", c.use_refinement)?;
        c.disparity_scale = kv.get_or("disparity_scale", c.disparity_scale)?;
        c.elu_alpha = kv.get_or("elu_alpha", c.elu_alpha)?;
        c.seed = kv.get_or("seed", c.seed)?;
        if let Some(p) = kv.raw("precision") {
            c.precision = DType::parse(p).ok_or_else(|| Error::config(format!("unknown precision {p:?}")))?;
        }
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let mut c = ModelConfig::tiny().with_variant(Variant::DilationsContext);
        c.encoder_dilations[1] = vec![1, 2];
        c.precision = DType::F64;
        let back = ModelConfig::from_kv(&c.to_kv(), ModelConfig::default()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn dilation_switch_only_touches_rates() {
        let on = ModelConfig::default();
        let off = on.clone().with_variant(Variant::Baseline);
        for stage in 0..3 {
            let (a, b) = (on.encoder_block(stage), off.encoder_block(stage));
            assert_eq!(a.layers(), b.layers());
            assert_eq!(a.output_channels(), b.output_channels());
            assert!(b.dilations.iter().all(|&d| d == 1));
            assert_eq!(a.receptive_field(), 37);
            assert_eq!(b.receptive_field(), 9);
        }
    }

    #[test]
    fn rejects_bad_values() {
        let mut kv = KvMap::new();
        kv.set("growth", 0);
        assert!(ModelConfig::from_kv(&kv, ModelConfig::default()).is_err());
        let mut kv = KvMap::new();
        kv.set("colour", 1);
        assert!(ModelConfig::from_kv(&kv, ModelConfig::default()).is_err());
    }
}
