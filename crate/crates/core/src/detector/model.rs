use rand::seq::index::sample as sample_indices;

use super::anchors::generate_anchors;
use super::config::{DetectorConfig, GradingHead};
use super::loss::{total_loss, LossBreakdown, LossTargets, RawOutputs};
use super::proposals::{decode_and_propose, Proposal};
use super::targets::{assign_head_targets, grading_target, mask_target, rpn_targets, HeadTarget};
use super::{Detection, Grading};
use crate::data_pipeline::TrainingSample;
use crate::error::{Error, Result};
use crate::geometry::{nms, BBox};
use crate::losses::{sigmoid, softmax};
use crate::nn::{ConvGeom, ParamStore, RoiSpec, Tape, Tensor, Var};
use crate::rng::Rng;
use crate::volume::Volume;

/// Parameter-name prefix of the grading head; the only namespace in which
/// the two variants differ.
pub const GRADING_NAMESPACE: &str = "heads.grading.";

/// Feature maps of one forward pass, finest level first.
pub struct Pyramid {
    pub levels: Vec<Var>,
    /// `(d, h, w)` of each level.
    pub shapes: Vec<[usize; 3]>,
}

/// Raw proposal-network outputs for every anchor of a patch.
pub struct RpnOutput {
    pub logits: Vec<Var>,
    pub deltas: Vec<Var>,
}

/// Head outputs for a set of RoIs.
pub struct HeadOutput {
    pub deltas: Var,
    pub grading: Var,
    pub mask: Option<Var>,
}

/// A two-stage detector with one of two grading heads.
#[derive(Debug, Clone)]
pub struct Detector {
    config: DetectorConfig,
    params: ParamStore,
}

impl Detector {
    /// Build and initialize. Parameters are seeded by name, so the two
    /// variants built with the same seed start from identical shared weights.
    pub fn new(config: DetectorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut p = ParamStore::new();
        let c = &config;
        let kd = if c.dimensionality == 3 { 3 } else { 1 };
        let ch = c.backbone_channels;
        let f = c.rpn_feature_maps;
        let conv = |p: &mut ParamStore, name: &str, cout: usize, cin: usize, kd: usize, k: usize| -> Result<()> {
            p.he_normal(&format!("{name}.w"), vec![cout, cin, kd, k, k], cin * kd * k * k, seed)?;
            p.constant(&format!("{name}.b"), vec![cout], 0.0)?;
            Ok(())
        };
        conv(&mut p, "backbone.stem", ch[0], c.in_channels, kd, 3)?;
        for s in 1..5 {
            conv(&mut p, &format!("backbone.stage{s}.down"), ch[s], ch[s - 1], kd, 3)?;
            if c.residual_blocks {
                conv(&mut p, &format!("backbone.stage{s}.res1"), ch[s], ch[s], kd, 3)?;
                conv(&mut p, &format!("backbone.stage{s}.res2"), ch[s], ch[s], kd, 3)?;
            }
        }
        for l in 0..c.pyramid_levels {
            conv(&mut p, &format!("fpn.lateral{l}"), f, ch[l + 1], 1, 1)?;
            conv(&mut p, &format!("fpn.smooth{l}"), f, f, kd, 3)?;
        }
        let a = c.anchors.per_cell(c.dimensionality);
        let nd = 2 * c.dimensionality;
        conv(&mut p, "rpn.conv", f, f, kd, 3)?;
        // Features are not normalized and reach rms ~20, so a small init keeps
        // untrained objectness near 0.5.
        p.normal("rpn.objectness.w", vec![a, f, 1, 1, 1], 0.001, seed)?;
        p.constant("rpn.objectness.b", vec![a], 0.0)?;
        p.normal("rpn.deltas.w", vec![a * nd, f, 1, 1, 1], 0.01, seed)?;
        p.constant("rpn.deltas.b", vec![a * nd], 0.0)?;

        let pooled = f * c.roialign_pool_grading.iter().product::<usize>();
        let h = c.head_hidden;
        p.he_normal("heads.fc1.w", vec![h, pooled], pooled, seed)?;
        p.constant("heads.fc1.b", vec![h], 0.0)?;
        p.he_normal("heads.fc2.w", vec![h, h], h, seed)?;
        p.constant("heads.fc2.b", vec![h], 0.0)?;
        p.normal("heads.box.w", vec![nd, h], 0.001, seed)?;
        p.constant("heads.box.b", vec![nd], 0.0)?;
        match c.grading_head {
            GradingHead::Regressor => {
                p.normal("heads.grading.regressor.w", vec![1, h], 0.01, seed)?;
                p.constant(
                    "heads.grading.regressor.b",
                    vec![1],
                    c.regressor_init.unwrap_or(0.0) as f32,
                )?;
            }
            GradingHead::Classifier => {
                p.normal("heads.grading.classifier.w", vec![c.class_count, h], 0.01, seed)?;
                p.constant("heads.grading.classifier.b", vec![c.class_count], 0.0)?;
            }
        }
        let m = c.mask_channels;
        conv(&mut p, "heads.mask.conv1", m, f, kd, 3)?;
        conv(&mut p, "heads.mask.conv2", m, m, kd, 3)?;
        p.he_normal("heads.mask.logits.w", vec![1, m, 1, 1, 1], m, seed)?;
        p.constant("heads.mask.logits.b", vec![1], 0.0)?;
        Ok(Detector { config, params: p })
    }

    pub fn from_parts(config: DetectorConfig, params: ParamStore) -> Result<Self> {
        let fresh = Detector::new(config.clone(), 0)?;
        if fresh.params.signature() != params.signature() {
            return Err(Error::Config(format!(
                "parameters do not fit a {} detector with this configuration",
                config.grading_head.name()
            )));
        }
        Ok(Detector { config, params })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn p(&self, tape: &mut Tape, name: &str) -> Var {
        let id = self
            .params
            .id(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from store"));
        tape.param(&self.params, id)
    }

    fn conv(&self, tape: &mut Tape, x: Var, name: &str, geom: ConvGeom) -> Result<Var> {
        let w = self.p(tape, &format!("{name}.w"));
        let b = self.p(tape, &format!("{name}.b"));
        tape.conv(x, w, b, geom)
    }

    fn kd(&self) -> usize {
        if self.config.dimensionality == 3 {
            3
        } else {
            1
        }
    }

    /// Check a patch `(x, y, z)` extent against the total stride.
    pub fn check_input(&self, dims: [usize; 3]) -> Result<()> {
        let m = self.config.input_multiple();
        let planar = self.config.dimensionality == 2;
        if planar && dims[2] != 1 {
            return Err(Error::Shape(format!("2D detector got a patch with {} slices", dims[2])));
        }
        for a in 0..3 {
            if planar && a == 2 {
                continue;
            }
            if dims[a] == 0 || dims[a] % m[a] != 0 {
                return Err(Error::Shape(format!(
                    "patch extent {dims:?} must be a multiple of {m:?} along (x, y, z)"
                )));
            }
        }
        Ok(())
    }

    /// Backbone and top-down pyramid. Level `l` has in-plane stride `4 * 2^l`.
    pub fn backbone_forward(&self, tape: &mut Tape, patch: &Volume) -> Result<Pyramid> {
        let dims = patch.dims();
        self.check_input(dims)?;
        let input = tape.input(Tensor::new(
            vec![1, self.config.in_channels, dims[2], dims[1], dims[0]],
            patch.data().to_vec(),
        ));
        self.backbone_from_var(tape, input)
    }

    /// [`Detector::backbone_forward`] from an input already on the tape
    /// (`[1, C, D, H, W]`), e.g. to differentiate w.r.t. the input.
    pub fn backbone_from_var(&self, tape: &mut Tape, input: Var) -> Result<Pyramid> {
        let c = &self.config;
        let kd = self.kd();
        let zs = c.z_strides;
        let mut x = self.conv(tape, input, "backbone.stem", ConvGeom::same(kd, 3, [zs[0], 2, 2]))?;
        x = tape.relu(x);
        let mut stages = Vec::with_capacity(4);
        for s in 1..5 {
            x = self.conv(
                tape,
                x,
                &format!("backbone.stage{s}.down"),
                ConvGeom::same(kd, 3, [zs[s], 2, 2]),
            )?;
            x = tape.relu(x);
            if c.residual_blocks {
                let geom = ConvGeom::same(kd, 3, [1, 1, 1]);
                let mut r = self.conv(tape, x, &format!("backbone.stage{s}.res1"), geom)?;
                r = tape.relu(r);
                r = self.conv(tape, r, &format!("backbone.stage{s}.res2"), geom)?;
                x = tape.add(x, r)?;
                x = tape.relu(x);
            }
            stages.push(x);
        }
        let nl = c.pyramid_levels;
        let mut merged: Vec<Var> = Vec::with_capacity(nl);
        for l in (0..nl).rev() {
            let mut m = self.conv(tape, stages[l], &format!("fpn.lateral{l}"), ConvGeom::pointwise())?;
            if let Some(&coarser) = merged.last() {
                let up = tape.upsample_nearest(coarser, [zs[l + 2], 2, 2]);
                m = tape.add(m, up)?;
            }
            merged.push(m);
        }
        merged.reverse();
        let mut levels = Vec::with_capacity(nl);
        let mut shapes = Vec::with_capacity(nl);
        for (l, m) in merged.into_iter().enumerate() {
            let p = self.conv(tape, m, &format!("fpn.smooth{l}"), ConvGeom::same(kd, 3, [1, 1, 1]))?;
            shapes.push(tape.value(p).spatial());
            levels.push(p);
        }
        Ok(Pyramid { levels, shapes })
    }

    /// Shared proposal network applied to every level.
    pub fn rpn_forward(&self, tape: &mut Tape, pyramid: &Pyramid) -> Result<RpnOutput> {
        let mut logits = Vec::new();
        let mut deltas = Vec::new();
        for &level in &pyramid.levels {
            let mut h = self.conv(tape, level, "rpn.conv", ConvGeom::same(self.kd(), 3, [1, 1, 1]))?;
            h = tape.relu(h);
            logits.push(self.conv(tape, h, "rpn.objectness", ConvGeom::pointwise())?);
            deltas.push(self.conv(tape, h, "rpn.deltas", ConvGeom::pointwise())?);
        }
        Ok(RpnOutput { logits, deltas })
    }

    /// Gather per-anchor arrays from the level tensors: logits in anchor
    /// order, deltas anchor-major, and each anchor's level.
    pub fn rpn_arrays(&self, tape: &Tape, rpn: &RpnOutput) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
        let nd = 2 * self.config.dimensionality;
        let a = self.config.anchors.per_cell(self.config.dimensionality);
        let mut logits = Vec::new();
        let mut deltas = Vec::new();
        let mut levels = Vec::new();
        for (l, (&lv, &dv)) in rpn.logits.iter().zip(&rpn.deltas).enumerate() {
            let lt = tape.value(lv);
            let s: usize = lt.spatial().iter().product();
            logits.extend(lt.data().iter().map(|&v| v as f64));
            levels.extend(std::iter::repeat_n(l, a * s));
            let dt = tape.value(dv).data();
            for ai in 0..a {
                for cell in 0..s {
                    for k in 0..nd {
                        deltas.push(dt[(ai * nd + k) * s + cell] as f64);
                    }
                }
            }
        }
        (logits, deltas, levels)
    }

    /// Scatter anchor-ordered gradients back to per-level tensor seeds.
    fn rpn_seeds(&self, tape: &Tape, rpn: &RpnOutput, g_logits: &[f64], g_deltas: &[f64]) -> Vec<(Var, Tensor)> {
        let nd = 2 * self.config.dimensionality;
        let a = self.config.anchors.per_cell(self.config.dimensionality);
        let mut seeds = Vec::new();
        let mut offset = 0;
        for (&lv, &dv) in rpn.logits.iter().zip(&rpn.deltas) {
            let lt = tape.value(lv);
            let s: usize = lt.spatial().iter().product();
            let n = a * s;
            let gl: Vec<f32> = g_logits[offset..offset + n].iter().map(|&v| v as f32).collect();
            seeds.push((lv, Tensor::new(lt.shape().to_vec(), gl)));
            let dshape = tape.value(dv).shape().to_vec();
            let mut gd = vec![0.0f32; n * nd];
            for ai in 0..a {
                for cell in 0..s {
                    for k in 0..nd {
                        gd[(ai * nd + k) * s + cell] = g_deltas[(offset + ai * s + cell) * nd + k] as f32;
                    }
                }
            }
            seeds.push((dv, Tensor::new(dshape, gd)));
            offset += n;
        }
        seeds
    }

    /// Pyramid level an RoI is pooled from.
    pub fn roi_level(&self, b: &BBox) -> usize {
        let size = (b.extent(0) * b.extent(1)).sqrt().max(1e-6);
        let k = (size / self.config.roi_canonical_size).log2().floor();
        k.clamp(0.0, (self.config.pyramid_levels - 1) as f64) as usize
    }

    fn roi_specs(&self, rois: &[BBox]) -> Vec<RoiSpec> {
        rois.iter()
            .map(|b| {
                let level = self.roi_level(b);
                let s = self.config.level_stride(level) as f64;
                let sz = self.config.level_z_stride(level) as f64;
                let (zmin, zmax) = if b.ndim() == 3 {
                    (b.min[2] / sz, b.max[2] / sz)
                } else {
                    (0.0, 1.0)
                };
                RoiSpec {
                    level,
                    min: [b.min[0] / s, b.min[1] / s, zmin],
                    max: [b.max[0] / s, b.max[1] / s, zmax],
                }
            })
            .collect()
    }

    /// Pool every RoI and run the box, grading and (optionally) mask heads.
    pub fn heads_forward(
        &self,
        tape: &mut Tape,
        pyramid: &Pyramid,
        rois: &[BBox],
        with_mask: bool,
    ) -> Result<HeadOutput> {
        let c = &self.config;
        let specs = self.roi_specs(rois);
        let pool = DetectorConfig::pool_dhw(c.roialign_pool_grading);
        let pooled = tape.roi_align(&pyramid.levels, &specs, pool, c.roialign_sampling)?;
        let flat = tape.flatten(pooled);
        let (w, b) = (self.p(tape, "heads.fc1.w"), self.p(tape, "heads.fc1.b"));
        let mut h = tape.linear(flat, w, b)?;
        h = tape.relu(h);
        let (w, b) = (self.p(tape, "heads.fc2.w"), self.p(tape, "heads.fc2.b"));
        h = tape.linear(h, w, b)?;
        h = tape.relu(h);
        let (w, b) = (self.p(tape, "heads.box.w"), self.p(tape, "heads.box.b"));
        let deltas = tape.linear(h, w, b)?;
        let g = format!("{GRADING_NAMESPACE}{}", c.grading_head.name());
        let (w, b) = (self.p(tape, &format!("{g}.w")), self.p(tape, &format!("{g}.b")));
        let grading = tape.linear(h, w, b)?;
        let mask = if with_mask {
            let pool = DetectorConfig::pool_dhw(c.roialign_pool_mask);
            let mut m = tape.roi_align(&pyramid.levels, &specs, pool, c.roialign_sampling)?;
            let geom = ConvGeom::same(self.kd(), 3, [1, 1, 1]);
            m = self.conv(tape, m, "heads.mask.conv1", geom)?;
            m = tape.relu(m);
            m = self.conv(tape, m, "heads.mask.conv2", geom)?;
            m = tape.relu(m);
            Some(self.conv(tape, m, "heads.mask.logits", ConvGeom::pointwise())?)
        } else {
            None
        };
        Ok(HeadOutput { deltas, grading, mask })
    }

    fn bounds(dims: [usize; 3]) -> [f64; 3] {
        dims.map(|v| v as f64)
    }

    /// Forward one training sample, compute the loss and add parameter
    /// gradients (scaled by `grad_scale`) into the store.
    pub fn accumulate_sample(
        &mut self,
        sample: &TrainingSample,
        grad_scale: f64,
        rng: &mut Rng,
    ) -> Result<LossBreakdown> {
        let c = self.config.clone();
        let dims = sample.patch.dims();
        let mut tape = Tape::new();
        let pyramid = self.backbone_forward(&mut tape, &sample.patch)?;
        let rpn = self.rpn_forward(&mut tape, &pyramid)?;
        let (logits, deltas, levels) = self.rpn_arrays(&tape, &rpn);
        let anchors: Vec<BBox> = generate_anchors(&c, dims).concat();
        if anchors.len() != logits.len() {
            return Err(Error::Config(format!(
                "{} anchors but {} proposal-network outputs",
                anchors.len(),
                logits.len()
            )));
        }
        let gts: Vec<BBox> = sample.objects.iter().map(|o| o.bbox).collect();
        let rt = rpn_targets(&anchors, &gts, c.rpn_positive_iou, c.rpn_negative_iou, &c.box_coder);

        let objectness: Vec<f64> = logits.iter().map(|&v| sigmoid(v)).collect();
        let mut rois: Vec<BBox> = decode_and_propose(
            &anchors,
            &levels,
            &objectness,
            &chunk(&deltas, 2 * c.dimensionality),
            &c.box_coder,
            Self::bounds(dims),
            c.pre_nms_train,
            c.post_nms_train,
            c.rpn_nms_iou,
        )
        .into_iter()
        .map(|p| p.bbox)
        .collect();
        if c.add_gt_proposals {
            rois.extend(gts.iter().copied());
        }
        let assigned = assign_head_targets(&rois, &sample.objects, c.proposal_match_iou, &c.box_coder);
        let mut positives: Vec<usize> = (0..rois.len()).filter(|&i| assigned[i].is_foreground()).collect();
        if positives.len() > c.head_max_positives {
            let mut keep: Vec<usize> = sample_indices(rng, positives.len(), c.head_max_positives).into_vec();
            keep.sort_unstable();
            positives = keep.into_iter().map(|k| positives[k]).collect();
        }

        let mut targets = LossTargets {
            rpn_labels: rt.labels,
            rpn_deltas: rt.deltas,
            ..Default::default()
        };
        let mask_pool = DetectorConfig::pool_dhw(c.roialign_pool_mask);
        let pos_rois: Vec<BBox> = positives.iter().map(|&i| rois[i]).collect();
        for &i in &positives {
            if let HeadTarget::Foreground {
                gt, score, bin, deltas, ..
            } = &assigned[i]
            {
                targets.head_deltas.push(deltas.clone());
                targets.grading.push(grading_target(c.grading_head, *score, *bin));
                targets
                    .masks
                    .push(mask_target(&rois[i], &sample.objects[*gt], mask_pool));
            }
        }
        let heads = if pos_rois.is_empty() {
            None
        } else {
            Some(self.heads_forward(&mut tape, &pyramid, &pos_rois, true)?)
        };
        let to64 = |t: &Tape, v: Var| -> Vec<f64> { t.value(v).data().iter().map(|&x| x as f64).collect() };
        let outputs = RawOutputs {
            rpn_logits: logits,
            rpn_deltas: deltas,
            head_deltas: heads.as_ref().map(|h| to64(&tape, h.deltas)).unwrap_or_default(),
            grading: heads.as_ref().map(|h| to64(&tape, h.grading)).unwrap_or_default(),
            mask_logits: heads
                .as_ref()
                .and_then(|h| h.mask)
                .map(|m| to64(&tape, m))
                .unwrap_or_default(),
        };
        let (breakdown, g) = total_loss(&c, &outputs, &targets, rng)?;

        let scale = |v: &[f64]| -> Vec<f32> { v.iter().map(|&x| (x * grad_scale) as f32).collect() };
        let g_logits: Vec<f64> = g.rpn_logits.iter().map(|&x| x * grad_scale).collect();
        let g_deltas: Vec<f64> = g.rpn_deltas.iter().map(|&x| x * grad_scale).collect();
        let mut seeds = self.rpn_seeds(&tape, &rpn, &g_logits, &g_deltas);
        if let Some(h) = &heads {
            seeds.push((
                h.deltas,
                Tensor::new(tape.value(h.deltas).shape().to_vec(), scale(&g.head_deltas)),
            ));
            seeds.push((
                h.grading,
                Tensor::new(tape.value(h.grading).shape().to_vec(), scale(&g.grading)),
            ));
            if let Some(m) = h.mask {
                seeds.push((m, Tensor::new(tape.value(m).shape().to_vec(), scale(&g.mask_logits))));
            }
        }
        let grads = tape.backward(seeds);
        tape.accumulate_param_grads(&grads, &mut self.params);
        Ok(breakdown)
    }

    /// Proposals for a patch with the inference-time counts.
    pub fn propose(&self, tape: &mut Tape, patch: &Volume) -> Result<(Pyramid, Vec<Proposal>)> {
        let c = &self.config;
        let dims = patch.dims();
        let pyramid = self.backbone_forward(tape, patch)?;
        let rpn = self.rpn_forward(tape, &pyramid)?;
        let (logits, deltas, levels) = self.rpn_arrays(tape, &rpn);
        let anchors: Vec<BBox> = generate_anchors(c, dims).concat();
        let objectness: Vec<f64> = logits.iter().map(|&v| sigmoid(v)).collect();
        let proposals = decode_and_propose(
            &anchors,
            &levels,
            &objectness,
            &chunk(&deltas, 2 * c.dimensionality),
            &c.box_coder,
            Self::bounds(dims),
            c.pre_nms_test,
            c.post_nms_test,
            c.rpn_nms_iou,
        );
        Ok((pyramid, proposals))
    }

    /// Detections for one patch: refined boxes, objectness from the proposal
    /// stage, grading from the head, final NMS keyed on objectness.
    pub fn predict(&self, patch: &Volume) -> Result<Vec<Detection>> {
        self.predict_with_nms(patch, self.config.final_nms_iou)
    }

    pub fn predict_with_nms(&self, patch: &Volume, nms_iou: f64) -> Result<Vec<Detection>> {
        let c = &self.config;
        let mut tape = Tape::new();
        let (pyramid, proposals) = self.propose(&mut tape, patch)?;
        let proposals: Vec<Proposal> = proposals
            .into_iter()
            .filter(|p| p.objectness >= c.min_objectness)
            .collect();
        if proposals.is_empty() {
            return Ok(Vec::new());
        }
        let rois: Vec<BBox> = proposals.iter().map(|p| p.bbox).collect();
        let heads = self.heads_forward(&mut tape, &pyramid, &rois, false)?;
        let nd = 2 * c.dimensionality;
        let dv = tape.value(heads.deltas).data();
        let gv = tape.value(heads.grading).data();
        let go = c.grading_outputs();
        let bounds = Self::bounds(patch.dims());
        let mut candidates = Vec::with_capacity(rois.len());
        for (r, p) in proposals.iter().enumerate() {
            let d: Vec<f64> = dv[r * nd..(r + 1) * nd].iter().map(|&v| v as f64).collect();
            let b = c.box_coder.decode(&d, &p.bbox).clip(bounds);
            if !b.is_valid() || (0..b.ndim()).any(|a| b.extent(a) <= 0.0) {
                continue;
            }
            let raw: Vec<f64> = gv[r * go..(r + 1) * go].iter().map(|&v| v as f64).collect();
            let grading = match c.grading_head {
                GradingHead::Regressor => Grading::Score(raw[0]),
                GradingHead::Classifier => Grading::Probabilities(softmax(&raw)?),
            };
            candidates.push(Detection {
                bbox: b,
                objectness: p.objectness,
                grading,
            });
        }
        Ok(final_nms(candidates, nms_iou, c.max_detections))
    }

    /// Names of all parameters, sorted.
    pub fn param_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.params.signature().into_iter().map(|(n, _)| n).collect();
        v.sort();
        v
    }
}

/// Suppress overlapping detections keyed on objectness alone, keep at most `max`.
pub fn final_nms(dets: Vec<Detection>, nms_iou: f64, max: usize) -> Vec<Detection> {
    let boxes: Vec<BBox> = dets.iter().map(|d| d.bbox).collect();
    let scores: Vec<f64> = dets.iter().map(|d| d.objectness).collect();
    let keep = nms(&boxes, &scores, nms_iou);
    keep.into_iter().take(max).map(|i| dets[i].clone()).collect()
}

fn chunk(v: &[f64], n: usize) -> Vec<Vec<f64>> {
    v.chunks(n).map(|c| c.to_vec()).collect()
}
