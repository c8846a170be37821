//! Shared validated data types consumed by every other module.
//!
//! Joint ordering follows the BigHand2.2M convention: wrist, then the five
//! MCP joints (thumb, index, middle, ring, pinky), then PIP/DIP/TIP per
//! finger in the same finger order. Predictions are consistent with this
//! ordering throughout.

use ndarray::{Array2, Array3, ArrayD};

use crate::error::{Error, Result};

/// Number of hand joints.
pub const JOINT_COUNT: usize = 21;
/// Spatial size of every silhouette view.
pub const SILHOUETTE_SIZE: usize = 128;
/// Tolerance on the centroid of a centered pose, in millimeters.
pub const CENTER_TOL_MM: f64 = 1e-6;

/// Guidance resolution for a given view count: 1/4 scale for single view,
/// 1/2 scale for the three-view stack.
pub fn guidance_scale(view_count: usize) -> usize {
    match view_count {
        1 => SILHOUETTE_SIZE / 4,
        _ => SILHOUETTE_SIZE / 2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordinateFrame {
    /// Camera coordinates, millimeters.
    Camera,
    /// Translated so the joint centroid sits at the origin.
    Centered,
}

/// 21 joint positions in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct HandPose {
    joints: [[f64; 3]; JOINT_COUNT],
    frame: CoordinateFrame,
}

impl HandPose {
    pub fn new(joints: [[f64; 3]; JOINT_COUNT], frame: CoordinateFrame) -> Result<Self> {
        let pose = Self { joints, frame };
        let violations = pose.violations();
        if violations.is_empty() {
            Ok(pose)
        } else {
            Err(Error::Data(violations.join("; ")))
        }
    }

    /// Build from a flat slice of 63 values (x y z per joint).
    pub fn from_flat(values: &[f64], frame: CoordinateFrame) -> Result<Self> {
        if values.len() != JOINT_COUNT * 3 {
            return Err(Error::Data(format!(
                "pose needs {} values, got {}",
                JOINT_COUNT * 3,
                values.len()
            )));
        }
        let mut joints = [[0.0; 3]; JOINT_COUNT];
        for (j, chunk) in values.chunks_exact(3).enumerate() {
            joints[j] = [chunk[0], chunk[1], chunk[2]];
        }
        Self::new(joints, frame)
    }

    pub fn joints(&self) -> &[[f64; 3]; JOINT_COUNT] {
        &self.joints
    }

    pub fn frame(&self) -> CoordinateFrame {
        self.frame
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for j in &self.joints {
            for a in 0..3 {
                c[a] += j[a];
            }
        }
        for a in c.iter_mut() {
            *a /= JOINT_COUNT as f64;
        }
        c
    }

    /// Translate so the joint centroid is at the origin. Idempotent on an
    /// already centered pose up to [`CENTER_TOL_MM`].
    pub fn centered(&self) -> (Self, [f64; 3]) {
        let c = self.centroid();
        let mut joints = self.joints;
        for j in joints.iter_mut() {
            for a in 0..3 {
                j[a] -= c[a];
            }
        }
        (
            Self {
                joints,
                frame: CoordinateFrame::Centered,
            },
            c,
        )
    }

    pub fn translated(&self, t: [f64; 3], frame: CoordinateFrame) -> Self {
        let mut joints = self.joints;
        for j in joints.iter_mut() {
            for a in 0..3 {
                j[a] += t[a];
            }
        }
        Self { joints, frame }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.joints.iter().flatten().copied().collect()
    }

    fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.joints.iter().flatten().any(|x| !x.is_finite()) {
            v.push("non-finite joint coordinate".to_string());
        } else if self.frame == CoordinateFrame::Centered {
            let c = self.centroid();
            if c.iter().any(|x| x.abs() > CENTER_TOL_MM) {
                v.push(format!(
                    "centered pose has centroid ({:.3e}, {:.3e}, {:.3e}) mm",
                    c[0], c[1], c[2]
                ));
            }
        }
        v
    }
}

/// Pinhole camera parameters, pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::Data(format!("focal lengths must be > 0: {fx}, {fy}")));
        }
        if !(0.0..k.width as f64).contains(&cx) || !(0.0..k.height as f64).contains(&cy) {
            return Err(Error::Data(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(k)
    }
}

/// Single-channel depth image in millimeters; 0 means "no measurement".
/// Training-time supervision only.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    depth: Array2<f64>,
    intrinsics: CameraIntrinsics,
}

impl DepthFrame {
    pub fn new(depth: Array2<f64>, intrinsics: CameraIntrinsics) -> Result<Self> {
        if depth.dim() != (intrinsics.height, intrinsics.width) {
            return Err(Error::Shape(format!(
                "depth is {:?}, intrinsics say {}x{}",
                depth.dim(),
                intrinsics.height,
                intrinsics.width
            )));
        }
        if depth.iter().any(|&d| !d.is_finite() || d < 0.0) {
            return Err(Error::Data("depth values must be finite and >= 0".into()));
        }
        Ok(Self { depth, intrinsics })
    }

    pub fn depth(&self) -> &Array2<f64> {
        &self.depth
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }
}

/// V binary 128x128 views. View order for V = 3 is fixed as
/// (frontal XY, side YZ, top XZ) so guidance channel blocks always
/// correspond to the same view.
#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteStack {
    views: Array3<f64>,
}

impl SilhouetteStack {
    pub fn new(views: Array3<f64>) -> Result<Self> {
        let s = Self { views };
        let violations = s.violations();
        if violations.is_empty() {
            Ok(s)
        } else {
            Err(Error::Data(violations.join("; ")))
        }
    }

    /// Bypasses validation; used to assemble candidates for
    /// [`validate_sample`], which reports violations as data.
    pub fn from_views_unchecked(views: Array3<f64>) -> Self {
        Self { views }
    }

    pub fn views(&self) -> &Array3<f64> {
        &self.views
    }

    pub fn view_count(&self) -> usize {
        self.views.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.views.iter().all(|&p| p == 0.0)
    }

    fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let (views, h, w) = self.views.dim();
        if views != 1 && views != 3 {
            v.push(format!("view count {views} not in {{1, 3}}"));
        }
        if h != SILHOUETTE_SIZE || w != SILHOUETTE_SIZE {
            v.push(format!(
                "silhouette size {h}x{w} != {SILHOUETTE_SIZE}x{SILHOUETTE_SIZE}"
            ));
        }
        if self.views.iter().any(|&p| p != 0.0 && p != 1.0) {
            v.push("non-binary silhouette value".to_string());
        }
        v
    }
}

/// Guidance tensor of shape S x S x (J * V) stored channel-first (J*V, S, S).
#[derive(Debug, Clone)]
pub struct DepthPerception {
    tensor: Array3<f64>,
    view_count: usize,
}

impl DepthPerception {
    pub fn new(tensor: Array3<f64>, view_count: usize) -> Result<Self> {
        let (c, s0, s1) = tensor.dim();
        let s = guidance_scale(view_count);
        if c != JOINT_COUNT * view_count {
            return Err(Error::Shape(format!(
                "guidance channels {c} != J*V = {}",
                JOINT_COUNT * view_count
            )));
        }
        if s0 != s || s1 != s {
            return Err(Error::Shape(format!(
                "guidance is {s0}x{s1}, expected {s}x{s} for V={view_count}"
            )));
        }
        Ok(Self { tensor, view_count })
    }

    pub fn tensor(&self) -> &Array3<f64> {
        &self.tensor
    }

    pub fn scale(&self) -> usize {
        guidance_scale(self.view_count)
    }

    pub fn view_count(&self) -> usize {
        self.view_count
    }

    pub fn from_dyn(tensor: ArrayD<f64>, view_count: usize) -> Result<Self> {
        let t3 = tensor
            .into_dimensionality::<ndarray::Ix3>()
            .map_err(|e| Error::Shape(format!("guidance tensor not 3-d: {e}")))?;
        Self::new(t3, view_count)
    }
}

/// One dataset element: silhouettes plus the centered target pose, with the
/// source depth frame kept only for training.
#[derive(Debug, Clone)]
pub struct Sample {
    pub silhouettes: SilhouetteStack,
    pub pose: HandPose,
    pub depth: Option<DepthFrame>,
    pub cube_mm: f64,
}

impl Sample {
    pub fn new(
        silhouettes: SilhouetteStack,
        pose: HandPose,
        depth: Option<DepthFrame>,
        cube_mm: f64,
    ) -> Result<Self> {
        let s = Self {
            silhouettes,
            pose,
            depth,
            cube_mm,
        };
        let violations = validate_sample(&s);
        if violations.is_empty() {
            Ok(s)
        } else {
            Err(Error::Data(violations.join("; ")))
        }
    }
}

/// Report every invariant violation found in `s`. Violations are data, not
/// failures: an empty list means the sample is valid.
pub fn validate_sample(s: &Sample) -> Vec<String> {
    let mut v = s.silhouettes.violations();
    let joints = s.pose.joints();
    if joints.len() != JOINT_COUNT {
        // Unreachable with the fixed-size array, kept for parity with the
        // contract wording.
        v.push(format!("joint count {} != {}", joints.len(), JOINT_COUNT));
    }
    v.extend(s.pose.violations());
    if s.pose.frame() != CoordinateFrame::Centered {
        v.push("sample pose must be in the centered frame".to_string());
    }
    if let Some(depth) = &s.depth {
        let k = depth.intrinsics();
        if depth.depth().dim() != (k.height, k.width) {
            v.push(format!(
                "depth shape {:?} does not match intrinsics {}x{}",
                depth.depth().dim(),
                k.height,
                k.width
            ));
        }
        if depth.depth().iter().any(|&d| !d.is_finite() || d < 0.0) {
            v.push("depth values must be finite and >= 0".to_string());
        }
    }
    if !(s.cube_mm > 0.0) || !s.cube_mm.is_finite() {
        v.push(format!("cube_mm {} must be positive and finite", s.cube_mm));
    }
    v
}

/// Which pyramid levels are fused into the guidance: none, half level
/// (1/8 and 1/4 scales) or full level (1/8 through 1/2).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpLevels {
    None,
    Hdp,
    Fdp,
}

impl DpLevels {
    pub fn as_str(&self) -> &'static str {
        match self {
            DpLevels::None => "none",
            DpLevels::Hdp => "HDP",
            DpLevels::Fdp => "FDP",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(DpLevels::None),
            "hdp" => Ok(DpLevels::Hdp),
            "fdp" => Ok(DpLevels::Fdp),
            other => Err(Error::Config(format!(
                "dp_levels must be none, HDP or FDP, got {other:?}"
            ))),
        }
    }
}

/// All hyperparameters, variant flags and loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda_p: f64,
    pub lambda_dp: f64,
    pub lambda_w: f64,
    pub learning_rate: f64,
    /// Per-epoch learning-rate decay factor.
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub view_count: usize,
    pub dp_levels: DpLevels,
    pub include_fake_depth_in_guidance: bool,
    pub gt_depth_supervision: bool,
    pub seed: u64,
    /// Treat the guidance as a fixed target per step instead of letting
    /// gradients flow back into the guidance network.
    pub stop_gradient_on_guidance: bool,
    /// Plain L2 coefficient applied on top of lambda_w, for anyone wanting
    /// to test the literal weight-decay reading. Default 0.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_p: 0.1,
            lambda_dp: 0.1,
            lambda_w: 0.01,
            learning_rate: 1e-2,
            lr_decay: 0.9,
            epochs: 30,
            batch_size: 32,
            view_count: 3,
            dp_levels: DpLevels::Fdp,
            include_fake_depth_in_guidance: false,
            gt_depth_supervision: true,
            seed: 0,
            stop_gradient_on_guidance: false,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        fn nonneg(name: &str, x: f64) -> Result<()> {
            if x >= 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be >= 0, got {x}")))
            }
        }
        nonneg("lambda_p", self.lambda_p)?;
        nonneg("lambda_dp", self.lambda_dp)?;
        nonneg("lambda_w", self.lambda_w)?;
        nonneg("weight_decay", self.weight_decay)?;
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.lr_decay > 0.0) {
            return Err(Error::Config(format!(
                "lr_decay must be > 0, got {}",
                self.lr_decay
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.view_count != 1 && self.view_count != 3 {
            return Err(Error::Config(format!(
                "view_count must be 1 or 3, got {}",
                self.view_count
            )));
        }
        Ok(())
    }

    /// Apply one `key=value` override. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
        }
        fn parse_bool(key: &str, value: &str) -> Result<bool> {
            match value.to_ascii_lowercase().as_str() {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(Error::Config(format!("bad bool {value:?} for {key}"))),
            }
        }
        match key {
            "lambda_p" => self.lambda_p = parse(key, value)?,
            "lambda_dp" => self.lambda_dp = parse(key, value)?,
            "lambda_w" => self.lambda_w = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "lr_decay" => self.lr_decay = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "view_count" => self.view_count = parse(key, value)?,
            "dp_levels" => self.dp_levels = DpLevels::parse(value)?,
            "include_fake_depth_in_guidance" => {
                self.include_fake_depth_in_guidance = parse_bool(key, value)?
            }
            "gt_depth_supervision" => self.gt_depth_supervision = parse_bool(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "stop_gradient_on_guidance" => {
                self.stop_gradient_on_guidance = parse_bool(key, value)?
            }
            "weight_decay" => self.weight_decay = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parse a flat key=value config file body. `#` starts a comment.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {raw:?}", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Serialize as the same flat key=value format accepted by
    /// [`TrainConfig::from_kv_text`].
    pub fn to_kv_text(&self) -> String {
        format!(
            "lambda_p = {}\nlambda_dp = {}\nlambda_w = {}\nlearning_rate = {}\nlr_decay = {}\n\
             epochs = {}\nbatch_size = {}\nview_count = {}\ndp_levels = {}\n\
             include_fake_depth_in_guidance = {}\ngt_depth_supervision = {}\nseed = {}\n\
             stop_gradient_on_guidance = {}\nweight_decay = {}\n",
            self.lambda_p,
            self.lambda_dp,
            self.lambda_w,
            self.learning_rate,
            self.lr_decay,
            self.epochs,
            self.batch_size,
            self.view_count,
            self.dp_levels.as_str(),
            self.include_fake_depth_in_guidance,
            self.gt_depth_supervision,
            self.seed,
            self.stop_gradient_on_guidance,
            self.weight_decay,
        )
    }

    pub fn guidance_scale(&self) -> usize {
        guidance_scale(self.view_count)
    }

    pub fn guidance_channels(&self) -> usize {
        JOINT_COUNT * self.view_count
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn valid_pose_camera() -> HandPose {
        let mut joints = [[0.0; 3]; JOINT_COUNT];
        for (j, joint) in joints.iter_mut().enumerate() {
            *joint = [j as f64 * 3.0, 20.0 - j as f64, 550.0 + j as f64 * 2.0];
        }
        HandPose::new(joints, CoordinateFrame::Camera).unwrap()
    }

    fn valid_sample() -> Sample {
        let views = Array3::<f64>::zeros((3, SILHOUETTE_SIZE, SILHOUETTE_SIZE));
        let (pose, _) = valid_pose_camera().centered();
        Sample::new(SilhouetteStack::new(views).unwrap(), pose, None, 300.0).unwrap()
    }

    #[test]
    fn all_zero_silhouette_is_legal() {
        let s = valid_sample();
        assert!(validate_sample(&s).is_empty());
        assert!(s.silhouettes.is_empty());
    }

    #[test]
    fn non_binary_silhouette_flagged() {
        let mut s = valid_sample();
        let mut views = s.silhouettes.views().clone();
        views[[0, 4, 7]] = 0.5;
        s.silhouettes = SilhouetteStack::from_views_unchecked(views);
        let v = validate_sample(&s);
        assert!(
            v.iter().any(|m| m.contains("non-binary silhouette value")),
            "{v:?}"
        );
    }

    #[test]
    fn centering_is_idempotent() {
        let pose = valid_pose_camera();
        let (c1, _) = pose.centered();
        let (c2, shift) = c1.centered();
        assert!(shift.iter().all(|x| x.abs() <= CENTER_TOL_MM));
        for (a, b) in c1.joints().iter().zip(c2.joints()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= CENTER_TOL_MM);
            }
        }
    }

    #[test]
    fn off_center_pose_rejected_in_centered_frame() {
        let joints = [[1.0, 0.0, 0.0]; JOINT_COUNT];
        assert!(HandPose::new(joints, CoordinateFrame::Centered).is_err());
        assert!(HandPose::new(joints, CoordinateFrame::Camera).is_ok());
    }

    #[test]
    fn config_defaults_match_training_protocol() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lambda_p, 0.1);
        assert_eq!(cfg.lambda_dp, 0.1);
        assert_eq!(cfg.lambda_w, 0.01);
        assert_eq!(cfg.learning_rate, 1e-2);
        assert_eq!(cfg.epochs, 30);
    }

    #[test]
    fn config_roundtrip_and_overrides() {
        let mut cfg = TrainConfig::from_kv_text("batch_size = 4\ndp_levels = HDP\n").unwrap();
        assert_eq!(cfg.batch_size, 4);
        assert_eq!(cfg.dp_levels, DpLevels::Hdp);
        cfg.set("view_count", "1").unwrap();
        let text = cfg.to_kv_text();
        let back = TrainConfig::from_kv_text(&text).unwrap();
        assert_eq!(cfg, back);
        assert!(cfg.set("no_such_key", "1").is_err());
        assert!(TrainConfig::from_kv_text("batch_size = 0").is_err());
    }

    #[test]
    fn guidance_shape_constants() {
        assert_eq!(guidance_scale(1), 32);
        assert_eq!(guidance_scale(3), 64);
        let t = Array3::<f64>::zeros((63, 64, 64));
        assert!(DepthPerception::new(t, 3).is_ok());
        let t = Array3::<f64>::zeros((21, 64, 64));
        assert!(DepthPerception::new(t, 1).is_err());
    }
}
