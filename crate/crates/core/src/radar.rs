//! Synthetic MIMO radar: a stepped-frequency virtual uniform linear array
//! observing point scatterers.
//!
//! Each received sample is a superposition over propagation paths of an
//! attenuation coefficient times two phase terms: an angle-of-arrival
//! shift across array elements and a two-way time-of-flight shift across
//! frequency points. A procedural articulated walker supplies the moving
//! scatterers so the whole pipeline runs without hardware.

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::types::{BoundingBox, Keypoints3D, PoseFrame, NUM_KEYPOINTS};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Capture rate of the radio system.
pub const FRAME_RATE_HZ: f64 = 20.0;

/// Which projection plane a radar observes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Plane {
    /// Elements along the world x axis; heatmap axes are (x, y).
    Horizontal,
    /// Elements along the world z axis; heatmap axes are (y, z).
    Vertical,
}

/// Virtual uniform linear array with stepped frequency points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    /// Number of virtual elements M.
    pub num_elements: usize,
    /// Interelement spacing d in meters.
    pub element_spacing: f64,
    /// Number of frequency points N.
    pub num_freqs: usize,
    /// Carrier f_0 in Hz.
    pub carrier_hz: f64,
    /// Bandwidth B in Hz; frequency points are f_n = f_0 + n B/(N-1).
    pub bandwidth_hz: f64,
    pub plane: Plane,
    /// Propagation speed c in m/s.
    pub propagation_speed: f64,
    /// Reference point of the array (element 0) in world coordinates.
    pub origin: [f64; 3],
}

impl ArrayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_elements < 2 {
            return Err(CoreError::InvalidArgument("num_elements must be >= 2".into()));
        }
        if self.num_freqs < 2 {
            return Err(CoreError::InvalidArgument("num_freqs must be >= 2".into()));
        }
        if !(self.carrier_hz > 0.0 && self.bandwidth_hz > 0.0 && self.propagation_speed > 0.0) {
            return Err(CoreError::InvalidArgument(
                "carrier, bandwidth and propagation speed must be positive".into(),
            ));
        }
        // Half-wavelength limit at the highest frequency point keeps the
        // array free of grating-lobe ambiguity.
        let d_max = self.propagation_speed / (2.0 * (self.carrier_hz + self.bandwidth_hz));
        if self.element_spacing <= 0.0 || self.element_spacing > d_max + 1e-15 {
            return Err(CoreError::InvalidArgument(format!(
                "element_spacing {} outside (0, {d_max:.6e}]",
                self.element_spacing
            )));
        }
        Ok(())
    }

    /// Frequency of point `n`.
    pub fn freq(&self, n: usize) -> f64 {
        self.carrier_hz + n as f64 * self.bandwidth_hz / (self.num_freqs - 1) as f64
    }

    /// Unit vector along which the elements are laid out.
    pub fn axis(&self) -> [f64; 3] {
        match self.plane {
            Plane::Horizontal => [1.0, 0.0, 0.0],
            Plane::Vertical => [0.0, 0.0, 1.0],
        }
    }

    /// Maps in-plane heatmap coordinates to a world point.
    ///
    /// Horizontal maps (a, b) to (x=a, y=b) at the array's height;
    /// vertical maps (a, b) to (y=a, z=b) at the array's x.
    pub fn plane_to_world(&self, p: [f64; 2]) -> [f64; 3] {
        match self.plane {
            Plane::Horizontal => [p[0], p[1], self.origin[2]],
            Plane::Vertical => [self.origin[0], p[0], p[1]],
        }
    }

    /// Projects a world point onto the heatmap plane coordinates.
    pub fn world_to_plane(&self, p: [f64; 3]) -> [f64; 2] {
        match self.plane {
            Plane::Horizontal => [p[0], p[1]],
            Plane::Vertical => [p[1], p[2]],
        }
    }

    /// Default horizontal radar: 77 GHz carrier, 1.23 GHz bandwidth,
    /// 16 virtual elements at the half-wavelength limit, 1 m height.
    pub fn default_horizontal() -> Self {
        let carrier = 77e9;
        let bandwidth = 1.23e9;
        Self {
            num_elements: 16,
            element_spacing: SPEED_OF_LIGHT / (2.0 * (carrier + bandwidth)),
            num_freqs: 64,
            carrier_hz: carrier,
            bandwidth_hz: bandwidth,
            plane: Plane::Horizontal,
            propagation_speed: SPEED_OF_LIGHT,
            origin: [0.0, 0.0, 1.0],
        }
    }

    /// Default vertical radar at 79 GHz, mounted on the same mast.
    pub fn default_vertical() -> Self {
        let carrier = 79e9;
        let bandwidth = 1.23e9;
        Self {
            num_elements: 16,
            element_spacing: SPEED_OF_LIGHT / (2.0 * (carrier + bandwidth)),
            num_freqs: 64,
            carrier_hz: carrier,
            bandwidth_hz: bandwidth,
            plane: Plane::Vertical,
            propagation_speed: SPEED_OF_LIGHT,
            origin: [0.0, 0.0, 0.6],
        }
    }
}

/// What kind of reflector a scatterer is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScattererKind {
    Dynamic,
    StaticClutter,
}

/// One point reflector with a complex attenuation coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub position: [f64; 3],
    pub amplitude: Complex64,
    pub kind: ScattererKind,
}

impl Scatterer {
    pub fn new(position: [f64; 3], amplitude: Complex64, kind: ScattererKind) -> Result<Self> {
        if amplitude.norm() <= 0.0 {
            return Err(CoreError::InvalidArgument("scatterer amplitude must be nonzero".into()));
        }
        if !position.iter().all(|v| v.is_finite()) {
            return Err(CoreError::InvalidArgument("scatterer position must be finite".into()));
        }
        Ok(Self { position, amplitude, kind })
    }
}

/// Raw complex samples of one capture: element index by frequency index.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexFrame {
    pub samples: Array2<Complex64>,
    pub timestamp: f64,
    pub plane: Plane,
}

impl ComplexFrame {
    pub fn check_shape(&self, cfg: &ArrayConfig) -> Result<()> {
        let (m, n) = self.samples.dim();
        if m != cfg.num_elements || n != cfg.num_freqs {
            return Err(CoreError::InvalidArgument(format!(
                "frame shape ({m}, {n}) does not match array config ({}, {})",
                cfg.num_elements, cfg.num_freqs
            )));
        }
        Ok(())
    }
}

/// Combined angle-of-arrival and two-way time-of-flight phasor for one
/// scatterer position, element and frequency point.
///
/// The returned value always has unit modulus; time of flight is two-way
/// (`tau = 2 r / c`).
pub fn steering_phase(pos: [f64; 3], m: usize, n: usize, cfg: &ArrayConfig) -> Result<Complex64> {
    let (cos_theta, range) = aoa_range(pos, cfg)?;
    let f_n = cfg.freq(n);
    let tau = 2.0 * range / cfg.propagation_speed;
    let phase = -2.0
        * std::f64::consts::PI
        * f_n
        * ((m as f64 * cfg.element_spacing * cos_theta) / cfg.propagation_speed + tau);
    Ok(Complex64::from_polar(1.0, phase))
}

/// Cosine of the angle of arrival relative to the array axis, and range
/// from the array reference point.
fn aoa_range(pos: [f64; 3], cfg: &ArrayConfig) -> Result<(f64, f64)> {
    let rel = [pos[0] - cfg.origin[0], pos[1] - cfg.origin[1], pos[2] - cfg.origin[2]];
    let range = (rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2]).sqrt();
    if range < 1e-9 {
        return Err(CoreError::Domain(
            "scatterer coincident with the array reference point".into(),
        ));
    }
    let axis = cfg.axis();
    let cos_theta = (rel[0] * axis[0] + rel[1] * axis[1] + rel[2] * axis[2]) / range;
    Ok((cos_theta, range))
}

/// Synthesizes one frame as the superposition of all scatterer returns.
///
/// Linear in the scatterer list; an empty list yields an all-zero frame.
pub fn synthesize_frame(
    scatterers: &[Scatterer],
    t: f64,
    cfg: &ArrayConfig,
) -> Result<ComplexFrame> {
    cfg.validate()?;
    let mut samples = Array2::<Complex64>::zeros((cfg.num_elements, cfg.num_freqs));
    let freq_step = cfg.bandwidth_hz / (cfg.num_freqs - 1) as f64;
    for sc in scatterers {
        let (cos_theta, range) = aoa_range(sc.position, cfg)?;
        let tau = 2.0 * range / cfg.propagation_speed;
        // phase(m, n) = -2*pi*f_n*(m*d*cos_theta/c + tau) with
        // f_n = f_0 + n*step factorizes into phasor recurrences, which
        // avoids a sin/cos per (m, n) pair.
        let unit_m = cfg.element_spacing * cos_theta / cfg.propagation_speed;
        let two_pi = 2.0 * std::f64::consts::PI;
        // Across n at m = 0: multiply by exp(-j*2*pi*step*tau) each step.
        let step_n0 = Complex64::from_polar(1.0, -two_pi * freq_step * tau);
        // Moving from element m to m+1 at frequency n multiplies by
        // exp(-j*2*pi*f_n*unit_m); that factor itself advances by
        // exp(-j*2*pi*step*unit_m) per n.
        let elem_base0 = Complex64::from_polar(1.0, -two_pi * cfg.carrier_hz * unit_m);
        let elem_step = Complex64::from_polar(1.0, -two_pi * freq_step * unit_m);

        let mut row0 = Complex64::from_polar(1.0, -two_pi * cfg.carrier_hz * tau);
        let mut elem_base = elem_base0;
        let mut col_phasors = Vec::with_capacity(cfg.num_freqs);
        for _ in 0..cfg.num_freqs {
            col_phasors.push((row0, elem_base));
            row0 *= step_n0;
            elem_base *= elem_step;
        }
        for n in 0..cfg.num_freqs {
            let (base, elem) = col_phasors[n];
            let mut phasor = base;
            for m in 0..cfg.num_elements {
                samples[(m, n)] += sc.amplitude * phasor;
                phasor *= elem;
            }
        }
    }
    Ok(ComplexFrame { samples, timestamp: t, plane: cfg.plane })
}

/// Per-joint reflectivity constants: torso joints return more energy than
/// limb extremities.
pub const JOINT_REFLECTIVITY: [f64; NUM_KEYPOINTS] = [
    0.6, // nose
    1.0, // neck
    0.9, 0.9, // shoulders
    0.5, 0.5, // elbows
    0.3, 0.3, // wrists
    1.0, 1.0, // hips
    0.5, 0.5, // knees
    0.3, 0.3, // ankles
];

/// Procedural scene: a walker on a waypoint loop plus static clutter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneParams {
    /// Closed ground-plane path the pelvis follows, meters.
    pub waypoints: Vec<[f64; 2]>,
    /// Walking speed along the path, m/s.
    pub speed: f64,
    /// Leg swing amplitude, radians.
    pub leg_amplitude: f64,
    /// Arm swing amplitude, radians.
    pub arm_amplitude: f64,
    /// Gait cycle frequency, Hz.
    pub gait_freq: f64,
    /// Static clutter reflectors.
    pub clutter: Vec<Scatterer>,
    /// Extra torso scatterers interpolated between neck and pelvis.
    pub torso_infill: usize,
    /// Standard deviation of additive complex Gaussian noise per sample.
    pub noise_std: f64,
    /// Seed for noise generation (and any randomized scene helpers).
    pub seed: u64,
    /// Scene bounding box; the walker must stay inside it.
    pub bounds: BoundingBox,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            waypoints: vec![[-1.2, 1.2], [1.2, 1.2], [1.2, 3.4], [-1.2, 3.4]],
            speed: 1.2,
            leg_amplitude: 0.45,
            arm_amplitude: 0.35,
            gait_freq: 1.6,
            clutter: default_clutter(),
            torso_infill: 4,
            noise_std: 0.02,
            seed: 0,
            bounds: BoundingBox { min: [-2.0, 0.3, 0.0], max: [2.0, 4.3, 2.5] },
        }
    }
}

fn default_clutter() -> Vec<Scatterer> {
    // Wall and furniture returns: strong, fixed, well inside the scene.
    let spots: [[f64; 3]; 6] = [
        [-1.9, 4.1, 0.4],
        [1.9, 4.1, 0.9],
        [-1.8, 0.6, 1.4],
        [1.8, 0.7, 0.3],
        [0.3, 4.2, 1.9],
        [-0.6, 0.5, 0.2],
    ];
    spots
        .iter()
        .enumerate()
        .map(|(i, &p)| Scatterer {
            position: p,
            amplitude: Complex64::from_polar(2.0, 0.7 * i as f64),
            kind: ScattererKind::StaticClutter,
        })
        .collect()
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if self.waypoints.len() < 2 {
            return Err(CoreError::InvalidArgument("path needs at least 2 waypoints".into()));
        }
        if !(self.speed >= 0.0 && self.speed.is_finite()) {
            return Err(CoreError::InvalidArgument("speed must be finite and >= 0".into()));
        }
        if self.noise_std < 0.0 {
            return Err(CoreError::InvalidArgument("noise_std must be >= 0".into()));
        }
        for wp in &self.waypoints {
            let p = [wp[0], wp[1], 1.0];
            if !self.bounds.contains(p) {
                return Err(CoreError::OutOfRange(format!(
                    "waypoint {wp:?} outside scene bounds"
                )));
            }
        }
        for c in &self.clutter {
            if c.kind != ScattererKind::StaticClutter {
                return Err(CoreError::InvalidArgument(
                    "scene clutter list may only contain static scatterers".into(),
                ));
            }
        }
        Ok(())
    }

    /// Total length of the closed waypoint loop.
    fn loop_length(&self) -> f64 {
        let n = self.waypoints.len();
        (0..n)
            .map(|i| {
                let a = self.waypoints[i];
                let b = self.waypoints[(i + 1) % n];
                ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
            })
            .sum()
    }

    /// Pelvis ground position and walking direction at arc length `s`
    /// along the closed loop.
    fn path_at(&self, s: f64) -> ([f64; 2], [f64; 2]) {
        let n = self.waypoints.len();
        let total = self.loop_length();
        let mut s = if total > 0.0 { s.rem_euclid(total) } else { 0.0 };
        for i in 0..n {
            let a = self.waypoints[i];
            let b = self.waypoints[(i + 1) % n];
            let seg = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            if s <= seg || i == n - 1 {
                let dir = if seg > 0.0 {
                    [(b[0] - a[0]) / seg, (b[1] - a[1]) / seg]
                } else {
                    [1.0, 0.0]
                };
                let f = if seg > 0.0 { s / seg } else { 0.0 };
                return ([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])], dir);
            }
            s -= seg;
        }
        (self.waypoints[0], [1.0, 0.0])
    }
}

// Skeleton proportions, meters. Segment vectors are expressed in the
// walker's moving orthonormal frame so articulation never changes a bone
// length.
const PELVIS_HEIGHT: f64 = 0.92;
const HIP_HALF_WIDTH: f64 = 0.17;
const SHOULDER_HALF_WIDTH: f64 = 0.22;
const SHOULDER_RAISE: f64 = 0.50;
const NECK_RAISE: f64 = 0.55;
const NOSE_RAISE: f64 = 0.70;
const NOSE_FORWARD: f64 = 0.02;
const THIGH_LEN: f64 = 0.44;
const SHANK_LEN: f64 = 0.43;
const UPPER_ARM_LEN: f64 = 0.30;
const FOREARM_LEN: f64 = 0.27;
const ELBOW_FLEX: f64 = 0.35;
const SHANK_LAG: f64 = 0.4;
const BOB_AMPLITUDE: f64 = 0.03;
const SWAY_AMPLITUDE: f64 = 0.02;

/// Kinematically plausible 14-keypoint walker pose at time `t`.
///
/// The pelvis follows the waypoint loop; limbs swing as rigid pendulums
/// in the sagittal plane, so bone lengths are constant over time.
/// Deterministic given `(t, params)`.
pub fn walker_pose(t: f64, sp: &SceneParams) -> Result<PoseFrame> {
    if t < 0.0 {
        return Err(CoreError::InvalidArgument("time must be >= 0".into()));
    }
    sp.validate()?;

    let (ground, dir) = sp.path_at(sp.speed * t);
    let phase = 2.0 * std::f64::consts::PI * sp.gait_freq * t;

    // Moving frame: forward, left, and world up.
    let fwd = [dir[0], dir[1], 0.0];
    let left = [-dir[1], dir[0], 0.0];

    let bob = if sp.leg_amplitude > 0.0 { BOB_AMPLITUDE * (2.0 * phase).cos() } else { 0.0 };
    let sway = if sp.leg_amplitude > 0.0 { SWAY_AMPLITUDE * phase.sin() } else { 0.0 };
    let pelvis = [
        ground[0] + sway * left[0],
        ground[1] + sway * left[1],
        PELVIS_HEIGHT + bob,
    ];

    let at = |base: [f64; 3], df: f64, dl: f64, dz: f64| {
        [
            base[0] + df * fwd[0] + dl * left[0],
            base[1] + df * fwd[1] + dl * left[1],
            base[2] + dz,
        ]
    };
    // Pendulum segment of length `len` hanging from `base`, deflected by
    // `angle` in the sagittal plane (0 = straight down).
    let swing = |base: [f64; 3], len: f64, angle: f64| {
        at(base, len * angle.sin(), 0.0, -len * angle.cos())
    };

    let l_hip = at(pelvis, 0.0, HIP_HALF_WIDTH, 0.0);
    let r_hip = at(pelvis, 0.0, -HIP_HALF_WIDTH, 0.0);
    let neck = at(pelvis, 0.0, 0.0, NECK_RAISE);
    let nose = at(pelvis, NOSE_FORWARD, 0.0, NOSE_RAISE);
    let l_shoulder = at(pelvis, 0.0, SHOULDER_HALF_WIDTH, SHOULDER_RAISE);
    let r_shoulder = at(pelvis, 0.0, -SHOULDER_HALF_WIDTH, SHOULDER_RAISE);

    // Opposite legs are half a cycle apart; arms counter-swing their leg.
    let leg_angle = |limb_phase: f64| sp.leg_amplitude * (phase + limb_phase).sin();
    let arm_angle = |limb_phase: f64| sp.arm_amplitude * (phase + limb_phase).sin();

    let l_thigh = leg_angle(0.0);
    let r_thigh = leg_angle(std::f64::consts::PI);
    let l_knee = swing(l_hip, THIGH_LEN, l_thigh);
    let r_knee = swing(r_hip, THIGH_LEN, r_thigh);
    let l_ankle = swing(l_knee, SHANK_LEN, sp.leg_amplitude * (phase - SHANK_LAG).sin());
    let r_ankle = swing(
        r_knee,
        SHANK_LEN,
        sp.leg_amplitude * (phase + std::f64::consts::PI - SHANK_LAG).sin(),
    );

    let l_upper = arm_angle(std::f64::consts::PI);
    let r_upper = arm_angle(0.0);
    let l_elbow = swing(l_shoulder, UPPER_ARM_LEN, l_upper);
    let r_elbow = swing(r_shoulder, UPPER_ARM_LEN, r_upper);
    let l_wrist = swing(l_elbow, FOREARM_LEN, l_upper + ELBOW_FLEX);
    let r_wrist = swing(r_elbow, FOREARM_LEN, r_upper + ELBOW_FLEX);

    let keypoints = Keypoints3D::new([
        nose, neck, l_shoulder, r_shoulder, l_elbow, r_elbow, l_wrist, r_wrist, l_hip, r_hip,
        l_knee, r_knee, l_ankle, r_ankle,
    ])?;
    Ok(PoseFrame {
        timestamp: t,
        frame_id: (t * FRAME_RATE_HZ).round() as u64,
        keypoints,
    })
}

/// Dynamic scatterers for one pose: one per keypoint with per-joint
/// reflectivity, plus torso in-fill points between neck and pelvis.
pub fn pose_scatterers(pose: &Keypoints3D, torso_infill: usize) -> Vec<Scatterer> {
    let mut out = Vec::with_capacity(NUM_KEYPOINTS + torso_infill);
    for (k, &p) in pose.coords().iter().enumerate() {
        out.push(Scatterer {
            position: p,
            amplitude: Complex64::new(JOINT_REFLECTIVITY[k], 0.0),
            kind: ScattererKind::Dynamic,
        });
    }
    let neck = pose.keypoint(1);
    let pelvis_mid = {
        let lh = pose.keypoint(8);
        let rh = pose.keypoint(9);
        [(lh[0] + rh[0]) / 2.0, (lh[1] + rh[1]) / 2.0, (lh[2] + rh[2]) / 2.0]
    };
    for i in 1..=torso_infill {
        let f = i as f64 / (torso_infill + 1) as f64;
        let p = [
            pelvis_mid[0] + f * (neck[0] - pelvis_mid[0]),
            pelvis_mid[1] + f * (neck[1] - pelvis_mid[1]),
            pelvis_mid[2] + f * (neck[2] - pelvis_mid[2]),
        ];
        out.push(Scatterer {
            position: p,
            amplitude: Complex64::new(1.2, 0.0),
            kind: ScattererKind::Dynamic,
        });
    }
    out
}

/// A rendered dual-plane sequence with its ground-truth poses.
#[derive(Debug, Clone)]
pub struct RenderedSequence {
    pub frames_h: Vec<ComplexFrame>,
    pub frames_v: Vec<ComplexFrame>,
    pub poses: Vec<PoseFrame>,
}

/// Renders `n_frames` synchronized dual-plane frames at 20 Hz.
///
/// Deterministic given the scene seed; frames are synthesized in parallel
/// with a per-frame noise stream so thread count never changes output.
pub fn render_sequence(
    sp: &SceneParams,
    cfg_h: &ArrayConfig,
    cfg_v: &ArrayConfig,
    n_frames: usize,
) -> Result<RenderedSequence> {
    if n_frames < 2 {
        return Err(CoreError::InvalidArgument(
            "n_frames must be >= 2 (temporal differencing needs pairs)".into(),
        ));
    }
    sp.validate()?;
    cfg_h.validate()?;
    cfg_v.validate()?;

    let poses: Vec<PoseFrame> = (0..n_frames)
        .map(|i| walker_pose(i as f64 / FRAME_RATE_HZ, sp))
        .collect::<Result<_>>()?;
    for p in &poses {
        p.keypoints.check_in_bounds(&sp.bounds)?;
    }

    let render_plane = |cfg: &ArrayConfig, noise_stream: u64| -> Result<Vec<ComplexFrame>> {
        poses
            .par_iter()
            .enumerate()
            .map(|(i, pose)| {
                let mut scat = pose_scatterers(&pose.keypoints, sp.torso_infill);
                scat.extend_from_slice(&sp.clutter);
                let mut frame = synthesize_frame(&scat, pose.timestamp, cfg)?;
                if sp.noise_std > 0.0 {
                    let mut rng = ChaCha8Rng::seed_from_u64(sp.seed);
                    rng.set_stream(noise_stream * 1_000_003 + i as u64);
                    let normal = Normal::new(0.0, sp.noise_std).expect("noise_std validated");
                    for v in frame.samples.iter_mut() {
                        *v += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
                    }
                }
                Ok(frame)
            })
            .collect()
    };

    let frames_h = render_plane(cfg_h, 1)?;
    let frames_v = render_plane(cfg_v, 2)?;
    Ok(RenderedSequence { frames_h, frames_v, poses })
}
