//! Evaluation metrics: per-keypoint spatial location error, group and
//! overall summaries, trajectory tracking, and run comparison tables.
//!
//! Poses are carried in meters; every report converts to centimeters.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::types::{Keypoints3D, KEYPOINT_GROUPS, KEYPOINT_NAMES, NUM_KEYPOINTS};

const M_TO_CM: f64 = 100.0;

/// Spatial location error report over a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SleReport {
    /// Mean Euclidean error per keypoint, centimeters.
    pub per_keypoint_cm: [f64; NUM_KEYPOINTS],
    /// Group means in [`KEYPOINT_GROUPS`] order, centimeters.
    pub per_group_cm: [f64; 8],
    /// Unweighted mean of the 14 per-keypoint errors, centimeters.
    pub overall_cm: f64,
    /// Number of evaluated samples U.
    pub sample_count: usize,
}

/// Mean Euclidean distance per keypoint between predictions and ground
/// truth: `SLE_k = (1/U) sum_u ||p_hat_k - p_k||_2`.
pub fn sle(preds: &[Keypoints3D], gts: &[Keypoints3D]) -> Result<SleReport> {
    if preds.len() != gts.len() {
        return Err(CoreError::InvalidArgument(format!(
            "prediction/truth lengths differ: {} vs {}",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(CoreError::InvalidArgument("need at least one sample".into()));
    }
    let u = preds.len() as f64;
    let mut per_keypoint = [0.0f64; NUM_KEYPOINTS];
    for (p, g) in preds.iter().zip(gts.iter()) {
        for k in 0..NUM_KEYPOINTS {
            let a = p.keypoint(k);
            let b = g.keypoint(k);
            per_keypoint[k] +=
                ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
        }
    }
    for v in &mut per_keypoint {
        *v = *v / u * M_TO_CM;
    }
    let mut per_group = [0.0f64; 8];
    for (gi, (_, members)) in KEYPOINT_GROUPS.iter().enumerate() {
        per_group[gi] =
            members.iter().map(|&k| per_keypoint[k]).sum::<f64>() / members.len() as f64;
    }
    let overall = per_keypoint.iter().sum::<f64>() / NUM_KEYPOINTS as f64;
    Ok(SleReport {
        per_keypoint_cm: per_keypoint,
        per_group_cm: per_group,
        overall_cm: overall,
        sample_count: preds.len(),
    })
}

/// Ground-plane trajectory: per-frame mean of the keypoints' (x, y).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory2D {
    pub points: Vec<[f64; 2]>,
}

impl Trajectory2D {
    pub fn from_poses(poses: &[Keypoints3D]) -> Self {
        let points = poses
            .iter()
            .map(|p| {
                let mut x = 0.0;
                let mut y = 0.0;
                for kp in p.coords() {
                    x += kp[0];
                    y += kp[1];
                }
                [x / NUM_KEYPOINTS as f64, y / NUM_KEYPOINTS as f64]
            })
            .collect();
        Self { points }
    }
}

/// Trajectory tracking result with per-axis mean absolute error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackReport {
    pub predicted: Trajectory2D,
    pub truth: Trajectory2D,
    /// Mean absolute error on the X axis, centimeters.
    pub mae_x_cm: f64,
    /// Mean absolute error on the Y axis, centimeters.
    pub mae_y_cm: f64,
}

/// Builds predicted and true trajectories and their per-axis errors.
pub fn track(preds: &[Keypoints3D], gts: &[Keypoints3D]) -> Result<TrackReport> {
    if preds.len() != gts.len() {
        return Err(CoreError::InvalidArgument(format!(
            "prediction/truth lengths differ: {} vs {}",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(CoreError::InvalidArgument("need at least one sample".into()));
    }
    let predicted = Trajectory2D::from_poses(preds);
    let truth = Trajectory2D::from_poses(gts);
    let n = predicted.points.len() as f64;
    let mut mae = [0.0f64; 2];
    for (a, b) in predicted.points.iter().zip(truth.points.iter()) {
        mae[0] += (a[0] - b[0]).abs();
        mae[1] += (a[1] - b[1]).abs();
    }
    Ok(TrackReport {
        predicted,
        truth,
        mae_x_cm: mae[0] / n * M_TO_CM,
        mae_y_cm: mae[1] / n * M_TO_CM,
    })
}

/// Side-by-side comparison of two SLE reports over the same test set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunComparison {
    pub label_a: String,
    pub label_b: String,
    pub group_a_cm: [f64; 8],
    pub group_b_cm: [f64; 8],
    pub overall_a_cm: f64,
    pub overall_b_cm: f64,
    /// Per group, true when run A has the lower (better) error.
    pub a_wins_group: [bool; 8],
    pub a_wins_overall: bool,
}

/// Compares two reports; both must come from the same number of samples.
pub fn compare_runs(
    label_a: &str,
    report_a: &SleReport,
    label_b: &str,
    report_b: &SleReport,
) -> Result<RunComparison> {
    if report_a.sample_count != report_b.sample_count {
        return Err(CoreError::InvalidArgument(format!(
            "reports cover different test sets: {} vs {} samples",
            report_a.sample_count, report_b.sample_count
        )));
    }
    let mut a_wins_group = [false; 8];
    for i in 0..8 {
        a_wins_group[i] = report_a.per_group_cm[i] <= report_b.per_group_cm[i];
    }
    Ok(RunComparison {
        label_a: label_a.to_string(),
        label_b: label_b.to_string(),
        group_a_cm: report_a.per_group_cm,
        group_b_cm: report_b.per_group_cm,
        overall_a_cm: report_a.overall_cm,
        overall_b_cm: report_b.overall_cm,
        a_wins_group,
        a_wins_overall: report_a.overall_cm <= report_b.overall_cm,
    })
}

impl RunComparison {
    /// Markdown table in fixed group order with an Overall column.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str("| Model |");
        for (name, _) in KEYPOINT_GROUPS {
            out.push_str(&format!(" {name} |"));
        }
        out.push_str(" Overall |\n|---|");
        for _ in 0..9 {
            out.push_str("---|");
        }
        out.push('\n');
        let row = |label: &str, groups: &[f64; 8], overall: f64| {
            let mut r = format!("| {label} |");
            for g in groups {
                r.push_str(&format!(" {g:.2} |"));
            }
            r.push_str(&format!(" {overall:.2} |\n"));
            r
        };
        out.push_str(&row(&self.label_a, &self.group_a_cm, self.overall_a_cm));
        out.push_str(&row(&self.label_b, &self.group_b_cm, self.overall_b_cm));
        out
    }

    /// CSV rendering with one row per run.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model");
        for (name, _) in KEYPOINT_GROUPS {
            out.push_str(&format!(",{name}"));
        }
        out.push_str(",Overall\n");
        let row = |label: &str, groups: &[f64; 8], overall: f64| {
            let mut r = label.to_string();
            for g in groups {
                r.push_str(&format!(",{g:.4}"));
            }
            r.push_str(&format!(",{overall:.4}\n"));
            r
        };
        out.push_str(&row(&self.label_a, &self.group_a_cm, self.overall_a_cm));
        out.push_str(&row(&self.label_b, &self.group_b_cm, self.overall_b_cm));
        out
    }
}

impl SleReport {
    /// CSV with one row per keypoint plus group and overall rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,name,sle_cm\n");
        for (k, name) in KEYPOINT_NAMES.iter().enumerate() {
            out.push_str(&format!("keypoint,{name},{:.4}\n", self.per_keypoint_cm[k]));
        }
        for (gi, (name, _)) in KEYPOINT_GROUPS.iter().enumerate() {
            out.push_str(&format!("group,{name},{:.4}\n", self.per_group_cm[gi]));
        }
        out.push_str(&format!("overall,overall,{:.4}\n", self.overall_cm));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pose(v: [f64; 3]) -> Keypoints3D {
        Keypoints3D::new([v; NUM_KEYPOINTS]).unwrap()
    }

    fn random_pose(rng: &mut impl Rng) -> Keypoints3D {
        let mut coords = [[0.0; 3]; NUM_KEYPOINTS];
        for c in &mut coords {
            *c = [rng.gen_range(-1.0..1.0), rng.gen_range(1.0..3.0), rng.gen_range(0.0..2.0)];
        }
        Keypoints3D::new(coords).unwrap()
    }

    #[test]
    fn identical_poses_give_zero_report() {
        let gts = vec![pose([0.1, 0.2, 0.3]); 5];
        let r = sle(&gts, &gts).unwrap();
        assert!(r.per_keypoint_cm.iter().all(|&v| v == 0.0));
        assert_eq!(r.overall_cm, 0.0);
        assert_eq!(r.sample_count, 5);
    }

    #[test]
    fn three_four_five_offset_gives_five_cm() {
        // Every keypoint offset by (3, 4, 0) cm: SLE_k = 5 cm for all k.
        let gts = vec![pose([1.0, 2.0, 1.0]); 7];
        let preds: Vec<Keypoints3D> =
            gts.iter().map(|p| p.translated([0.03, 0.04, 0.0])).collect();
        let r = sle(&preds, &gts).unwrap();
        for v in r.per_keypoint_cm {
            assert_abs_diff_eq!(v, 5.0, epsilon = 1e-9);
        }
        for v in r.per_group_cm {
            assert_abs_diff_eq!(v, 5.0, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(r.overall_cm, 5.0, epsilon = 1e-9);
    }

    #[test]
    fn overall_is_mean_of_per_keypoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gts: Vec<Keypoints3D> = (0..20).map(|_| random_pose(&mut rng)).collect();
        let preds: Vec<Keypoints3D> = (0..20).map(|_| random_pose(&mut rng)).collect();
        let r = sle(&preds, &gts).unwrap();
        let mean = r.per_keypoint_cm.iter().sum::<f64>() / NUM_KEYPOINTS as f64;
        assert!((r.overall_cm - mean).abs() < 1e-9);
    }

    #[test]
    fn length_mismatch_errors() {
        let a = vec![pose([0.0; 3]); 3];
        let b = vec![pose([0.0; 3]); 4];
        assert!(sle(&a, &b).is_err());
        assert!(track(&a, &b).is_err());
    }

    #[test]
    fn sle_translation_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gts: Vec<Keypoints3D> = (0..10).map(|_| random_pose(&mut rng)).collect();
        let v: [f64; 3] = [0.01, 0.02, 0.02];
        let norm_cm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() * 100.0;
        // Exactly ||v|| when predictions equal truth beforehand.
        let shifted: Vec<Keypoints3D> = gts.iter().map(|p| p.translated(v)).collect();
        let r = sle(&shifted, &gts).unwrap();
        for k in 0..NUM_KEYPOINTS {
            assert_abs_diff_eq!(r.per_keypoint_cm[k], norm_cm, epsilon = 1e-9);
        }
        // At most ||v|| change in general.
        let preds: Vec<Keypoints3D> = (0..10).map(|_| random_pose(&mut rng)).collect();
        let base = sle(&preds, &gts).unwrap();
        let moved: Vec<Keypoints3D> = preds.iter().map(|p| p.translated(v)).collect();
        let after = sle(&moved, &gts).unwrap();
        for k in 0..NUM_KEYPOINTS {
            assert!((after.per_keypoint_cm[k] - base.per_keypoint_cm[k]).abs() <= norm_cm + 1e-9);
        }
    }

    #[test]
    fn sle_is_permutation_sensitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gts: Vec<Keypoints3D> = (0..8).map(|_| random_pose(&mut rng)).collect();
        let preds = gts.clone();
        let shuffled: Vec<Keypoints3D> = preds
            .iter()
            .map(|p| {
                let mut c = *p.coords();
                c.swap(0, 13);
                Keypoints3D::new(c).unwrap()
            })
            .collect();
        let r = sle(&shuffled, &gts).unwrap();
        assert!(r.overall_cm > 0.0, "swapping keypoint order must change the report");
    }

    #[test]
    fn track_zero_error_for_identical() {
        let gts = vec![pose([0.5, 1.5, 1.0]); 4];
        let r = track(&gts, &gts).unwrap();
        assert_eq!(r.mae_x_cm, 0.0);
        assert_eq!(r.mae_y_cm, 0.0);
    }

    #[test]
    fn track_mean_shift_on_x() {
        let gts = vec![pose([0.5, 1.5, 1.0]); 6];
        let preds: Vec<Keypoints3D> = gts.iter().map(|p| p.translated([0.02, 0.0, 0.0])).collect();
        let r = track(&preds, &gts).unwrap();
        assert_abs_diff_eq!(r.mae_x_cm, 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.mae_y_cm, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn compare_identical_reports_has_zero_deltas() {
        let gts = vec![pose([1.0, 2.0, 1.0]); 3];
        let preds: Vec<Keypoints3D> = gts.iter().map(|p| p.translated([0.03, 0.04, 0.0])).collect();
        let r = sle(&preds, &gts).unwrap();
        let cmp = compare_runs("a", &r, "b", &r).unwrap();
        for i in 0..8 {
            assert_eq!(cmp.group_a_cm[i], cmp.group_b_cm[i]);
        }
        assert!(cmp.a_wins_overall);
        let md = cmp.to_markdown();
        // Column order fixed to the group order.
        let header = md.lines().next().unwrap();
        assert_eq!(
            header,
            "| Model | Nose | Neck | Shoulders | Elbows | Wrists | Hips | Knees | Ankles | Overall |"
        );
        assert!(compare_runs("a", &r, "b", &SleReport { sample_count: 99, ..r.clone() }).is_err());
    }
}
