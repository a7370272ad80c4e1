//! Iterative rollouts, optionally remeshing in the loop, and RMSE metrics.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DomainSchema;
use crate::mesh::{transfer_state, write_obj, NodeType, SimMesh};
use crate::model::Model;
use crate::remesh::remesh;
use crate::sizing::SizingField;
use crate::train::Sample;
use crate::trajectory::Trajectory;

/// How the mesh evolves during a rollout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RemeshMode {
    /// Keep the initial mesh.
    None,
    /// Remesh every predicted state with the predicted sizing field.
    LearnedSizing,
    /// Follow the recorded mesh sequence, interpolating predictions onto it.
    GroundTruthMesh,
}

impl RemeshMode {
    pub fn name(self) -> &'static str {
        match self {
            RemeshMode::None => "none",
            RemeshMode::LearnedSizing => "learned-sizing",
            RemeshMode::GroundTruthMesh => "ground-truth-mesh",
        }
    }

    pub fn parse(s: &str) -> Option<RemeshMode> {
        [RemeshMode::None, RemeshMode::LearnedSizing, RemeshMode::GroundTruthMesh]
            .into_iter()
            .find(|m| m.name() == s)
    }
}

/// Anything that advances a state by one step.
pub trait Stepper {
    fn schema(&self) -> &DomainSchema;

    /// Next state on `current`'s mesh plus the sizing field for remeshing.
    /// `step` is the index of `current` in the rollout.
    fn advance(
        &self,
        step: usize,
        current: &SimMesh,
        history: &[&SimMesh],
        scripted_next: Option<&[f64]>,
    ) -> Result<(SimMesh, Option<SizingField>)>;
}

impl Stepper for Model {
    fn schema(&self) -> &DomainSchema {
        &self.schema
    }

    fn advance(
        &self,
        _step: usize,
        current: &SimMesh,
        history: &[&SimMesh],
        scripted_next: Option<&[f64]>,
    ) -> Result<(SimMesh, Option<SizingField>)> {
        self.step_with_sizing(current, history, scripted_next)
    }
}

/// Rolls `stepper` forward `steps` times from the first `h + 1` states of
/// `truth`. Scripted nodes follow `truth` while it lasts. A non-finite
/// prediction ends the rollout and is recorded in `truncated_at`.
pub fn rollout<S: Stepper + ?Sized>(stepper: &S, truth: &Trajectory, steps: usize, mode: RemeshMode) -> Result<Trajectory> {
    let schema = stepper.schema();
    let h = schema.history;
    if truth.len() < h + 1 {
        return Err(Error::Validation(vec![format!(
            "rollout needs {} initial states, trajectory has {}",
            h + 1,
            truth.len()
        )]));
    }
    if mode == RemeshMode::LearnedSizing && !schema.sizing_head {
        return Err(Error::Schema("learned-sizing rollouts need a sizing head".into()));
    }
    if mode == RemeshMode::GroundTruthMesh && truth.len() < h + 1 + steps {
        return Err(Error::Validation(vec![format!(
            "ground-truth-mesh rollout of {steps} steps needs {} recorded states",
            h + 1 + steps
        )]));
    }
    let mut states: Vec<SimMesh> = truth.states[..=h].to_vec();
    let mut truncated_at = None;
    for t in h..h + steps {
        let current = &states[t];
        let history = (1..=h)
            .map(|k| transfer_state(&states[t - k], current))
            .collect::<Result<Vec<_>>>()?;
        let hist: Vec<&SimMesh> = history.iter().collect();
        let scripted = match truth.states.get(t + 1) {
            Some(next) => Some(schema.integrated_values(&transfer_state(next, current)?)),
            None => None,
        };
        let (next, sizing) = match stepper.advance(t, current, &hist, scripted.as_deref()) {
            Ok(r) => r,
            Err(Error::NonFinite(msg)) => {
                log::warn!("rollout stopped at step {}: {msg}", t + 1);
                truncated_at = Some(t + 1);
                break;
            }
            Err(e) => return Err(e),
        };
        let next = match mode {
            RemeshMode::None => next,
            RemeshMode::GroundTruthMesh => transfer_state(&next, &truth.states[t + 1])?,
            RemeshMode::LearnedSizing => {
                let sizing = sizing.ok_or_else(|| Error::Schema("model returned no sizing field".into()))?;
                let out = remesh(&next, &sizing)?;
                if out.budget_exhausted {
                    log::warn!("split budget exhausted at rollout step {}", t + 1);
                }
                out.mesh
            }
        };
        states.push(next);
    }
    Ok(Trajectory {
        dt: truth.dt,
        schema: Some(schema.clone()),
        initial_states: h + 1,
        states,
        truncated_at,
        sizing: None,
    })
}

/// Values compared by the metrics: world positions for Lagrangian states,
/// integrated quantities (or all quantities without a schema) otherwise.
fn metric_values(m: &SimMesh, schema: Option<&DomainSchema>) -> Vec<f64> {
    if m.dim_world() > 0 {
        m.world_pos_flat().to_vec()
    } else {
        match schema {
            Some(s) => s.integrated_values(m),
            None => m.quantities_flat().to_vec(),
        }
    }
}

/// Per-step RMSE of the predicted states of `pred` against `truth`, with
/// predictions interpolated onto the truth mesh where meshes differ.
pub fn per_step_rmse(pred: &Trajectory, truth: &Trajectory) -> Result<Vec<f64>> {
    if (pred.dt - truth.dt).abs() > 1e-12 * truth.dt.abs().max(1.0) {
        return Err(Error::Validation(vec![format!(
            "time steps differ: {} vs {}",
            pred.dt, truth.dt
        )]));
    }
    if pred.len() > truth.len() {
        return Err(Error::Validation(vec![format!(
            "prediction has {} states, truth only {}",
            pred.len(),
            truth.len()
        )]));
    }
    let schema = truth.schema.as_ref().or(pred.schema.as_ref());
    (pred.initial_states..pred.len())
        .map(|k| {
            let p = transfer_state(&pred.states[k], &truth.states[k])?;
            let (a, b) = (metric_values(&p, schema), metric_values(&truth.states[k], schema));
            if a.is_empty() {
                return Ok(0.0);
            }
            let sq: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
            Ok((sq / a.len() as f64).sqrt())
        })
        .collect()
}

/// RMSE over the first `horizon` predicted steps (all of them if fewer),
/// averaging over coordinates, nodes and steps.
pub fn rmse(pred: &Trajectory, truth: &Trajectory, horizon: usize) -> Result<f64> {
    let per_step = per_step_rmse(pred, truth)?;
    Ok(pool(&per_step[..horizon.min(per_step.len())]))
}

/// Pools per-step RMSEs (equal node counts per step assumed) into one.
fn pool(per_step: &[f64]) -> f64 {
    if per_step.is_empty() {
        return 0.0;
    }
    (per_step.iter().map(|r| r * r).sum::<f64>() / per_step.len() as f64).sqrt()
}

/// Rollout metrics at the reported horizons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse_1: f64,
    pub rmse_50: f64,
    pub rmse_all: f64,
    /// Name of the per-step CSV written next to the JSON file.
    pub per_step_csv: String,
    #[serde(skip)]
    pub per_step: Vec<f64>,
}

pub fn evaluate(pred: &Trajectory, truth: &Trajectory) -> Result<Metrics> {
    let per_step = per_step_rmse(pred, truth)?;
    Ok(Metrics {
        rmse_1: pool(&per_step[..1.min(per_step.len())]),
        rmse_50: pool(&per_step[..50.min(per_step.len())]),
        rmse_all: pool(&per_step),
        per_step_csv: String::new(),
        per_step,
    })
}

/// Writes the metrics JSON at `path` and `<stem>_per_step.csv` beside it.
pub fn write_metrics(path: impl AsRef<Path>, metrics: &Metrics) -> Result<()> {
    let path = path.as_ref();
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("metrics");
    let csv_name = format!("{stem}_per_step.csv");
    let csv_path = path.with_file_name(&csv_name);
    let mut csv = String::from("step,rmse\n");
    for (k, r) in metrics.per_step.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", k + 1, r));
    }
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    let out = Metrics {
        per_step_csv: csv_name,
        ..metrics.clone()
    };
    let mut text = serde_json::to_string_pretty(&out).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `frame_00000.obj`, `frame_00001.obj`, ... into `dir`.
pub fn write_obj_sequence(traj: &Trajectory, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (k, s) in traj.states.iter().enumerate() {
        write_obj(dir.join(format!("frame_{k:05}.obj")), s)?;
    }
    Ok(())
}

/// One-step RMSE of the model and of the zero-change baseline (zero
/// acceleration for second-order schemas) over the given samples,
/// measured on the integrated field of NORMAL nodes.
pub fn one_step_rmse(model: &Model, samples: &[Sample]) -> Result<(f64, f64)> {
    let schema = &model.schema;
    let (mut sq_model, mut sq_base, mut count) = (0.0, 0.0, 0usize);
    for s in samples {
        let hist: Vec<&SimMesh> = s.history.iter().collect();
        let scripted = schema.integrated_values(&s.next);
        let pred = model.step(&s.current, &hist, Some(&scripted))?;
        let (p, x, xn) = (
            schema.integrated_values(&pred),
            schema.integrated_values(&s.current),
            schema.integrated_values(&s.next),
        );
        let xp = s.history.first().map(|m| schema.integrated_values(m));
        let w = schema.integrated_width();
        for i in (0..s.current.node_count()).filter(|&i| s.current.node_type(i) == NodeType::Normal) {
            for d in 0..w {
                let k = i * w + d;
                let base = match (schema.order, &xp) {
                    (2, Some(xp)) => 2.0 * x[k] - xp[k],
                    _ => x[k],
                };
                sq_model += (p[k] - xn[k]).powi(2);
                sq_base += (base - xn[k]).powi(2);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Validation(vec!["no supervised nodes to evaluate".into()]));
    }
    Ok(((sq_model / count as f64).sqrt(), (sq_base / count as f64).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{grid_triangles, validate, Cells};
    use crate::nn::NetConfig;
    use crate::remesh::split_edge;
    use crate::synth::{generate_trajectory, Domain, GenConfig};

    fn line(values: &[f64]) -> Trajectory {
        let states = values
            .iter()
            .map(|&v| {
                SimMesh::new(
                    2,
                    0,
                    1,
                    vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0],
                    vec![],
                    vec![NodeType::Normal, NodeType::Inflow, NodeType::Inflow],
                    vec![v, 0.0, 0.0],
                    Cells::Triangles(vec![[0, 1, 2]]),
                )
                .unwrap()
            })
            .collect();
        Trajectory::new(1.0, None, states)
    }

    #[test]
    fn rmse_examples() {
        let t = line(&[0.0, 1.0, 2.0]);
        assert_eq!(rmse(&t, &t, 1).unwrap(), 0.0);
        assert_eq!(rmse(&t, &t, 100).unwrap(), 0.0);
        // one free and two pinned channels: errors 3 and 4 on node 0 only
        let p = line(&[0.0, 4.0, 6.0]);
        let per = per_step_rmse(&p, &t).unwrap();
        assert!((per[0] - (9.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let single = |v: &[f64]| {
            let states = v
                .iter()
                .map(|&x| {
                    SimMesh::new(2, 0, 1, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0], vec![], vec![NodeType::Normal; 3], vec![x; 3], Cells::Triangles(vec![[0, 1, 2]]))
                        .unwrap()
                })
                .collect();
            Trajectory::new(1.0, None, states)
        };
        let (a, b) = (single(&[0.0, 3.0, 4.0]), single(&[0.0, 0.0, 0.0]));
        assert!((rmse(&a, &b, 2).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        let (c, d) = (single(&[1.5, 2.5, -0.5]), single(&[1.0, 2.0, -1.0]));
        assert!((rmse(&c, &d, 10).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn misaligned_trajectories_are_rejected() {
        let t = line(&[0.0, 1.0]);
        let mut u = line(&[0.0, 1.0]);
        u.dt = 0.5;
        assert!(rmse(&u, &t, 1).is_err());
        assert!(rmse(&line(&[0.0, 1.0, 2.0]), &t, 1).is_err());
    }

    #[test]
    fn zero_steps_returns_initial_states() {
        let schema = DomainSchema::synthetic_diffusion();
        let mut m = Model::new(schema, NetConfig { latent: 4, hidden_layers: 1, blocks: 1 }, 0).unwrap();
        m.freeze();
        let t = line(&[0.3, 0.4]);
        let r = rollout(&m, &t, 0, RemeshMode::None).unwrap();
        assert_eq!(r.states, vec![t.states[0].clone()]);
    }

    #[test]
    fn zero_output_first_order_model_is_constant() {
        let schema = DomainSchema::synthetic_diffusion();
        let mut m = Model::new(schema, NetConfig { latent: 4, hidden_layers: 1, blocks: 1 }, 0).unwrap();
        for t in m.net.tensors_mut() {
            t.fill(0.0);
        }
        m.freeze();
        let t = line(&[0.3, 0.4, 0.5]);
        let r = rollout(&m, &t, 5, RemeshMode::None).unwrap();
        assert_eq!(r.len(), 6);
        for s in &r.states {
            assert_eq!(s, &t.states[0]);
        }
    }

    /// Emits the recorded next state, interpolated onto the current mesh.
    struct Oracle<'a> {
        schema: DomainSchema,
        truth: &'a Trajectory,
    }

    impl Stepper for Oracle<'_> {
        fn schema(&self) -> &DomainSchema {
            &self.schema
        }

        fn advance(&self, step: usize, current: &SimMesh, _: &[&SimMesh], _: Option<&[f64]>) -> Result<(SimMesh, Option<SizingField>)> {
            Ok((transfer_state(&self.truth.states[step + 1], current)?, None))
        }
    }

    #[test]
    fn oracle_on_recorded_meshes_reproduces_truth() {
        // meshes refine over time; positions are affine in mesh space so
        // interpolation between meshes is exact up to rounding
        let (uv, tris) = grid_triangles(3, 3, 1.0, 1.0);
        let n = 9;
        let mut mesh = SimMesh::new(2, 3, 3, uv, vec![0.0; 27], vec![NodeType::Normal; n], vec![0.0; 27], Cells::Triangles(tris)).unwrap();
        let mut sizing = SizingField::uniform(n, crate::linalg::Sym2::IDENTITY);
        let mut states = Vec::new();
        for t in 0..6 {
            let c = t as f64 * 0.1;
            let world: Vec<f64> = (0..mesh.node_count())
                .flat_map(|i| {
                    let [u, v] = mesh.uv(i);
                    [u + 0.3 * v + c, 2.0 * v - c * u, 0.5 * u * c]
                })
                .collect();
            states.push(mesh.with_world_pos(world).unwrap());
            let (m2, s2) = split_edge(&mesh, &sizing, 0, 4).unwrap_or((mesh.clone(), sizing.clone()));
            mesh = m2;
            sizing = s2;
        }
        let schema = DomainSchema::synthetic_cloth(0.5);
        let truth = Trajectory::new(0.02, Some(schema.clone()), states);
        let oracle = Oracle { schema, truth: &truth };
        let r = rollout(&oracle, &truth, 4, RemeshMode::GroundTruthMesh).unwrap();
        assert_eq!(r.len(), 6);
        assert!(rmse(&r, &truth, 10).unwrap() < 1e-9);
        for (a, b) in r.states.iter().zip(&truth.states) {
            assert_eq!(a.cells(), b.cells());
        }
    }

    #[test]
    fn learned_sizing_rollout_needs_sizing_head() {
        let t = generate_trajectory(&GenConfig::new(Domain::Cloth, 1, 3, 0), 0).unwrap();
        let mut m = Model::new(t.schema.clone().unwrap(), NetConfig { latent: 4, hidden_layers: 1, blocks: 1 }, 0).unwrap();
        m.freeze();
        assert!(matches!(rollout(&m, &t, 2, RemeshMode::LearnedSizing), Err(Error::Schema(_))));
    }

    #[test]
    fn learned_sizing_rollout_keeps_meshes_valid() {
        let t = generate_trajectory(&GenConfig::new(Domain::ClothRemesh, 1, 5, 0), 0).unwrap();
        let mut m = Model::new(t.schema.clone().unwrap(), NetConfig { latent: 8, hidden_layers: 1, blocks: 1 }, 0).unwrap();
        m.freeze();
        let r = rollout(&m, &t, 5, RemeshMode::LearnedSizing).unwrap();
        for s in &r.states {
            assert!(validate(s).is_empty());
        }
    }

    #[test]
    fn metrics_files() {
        let t = line(&[0.0, 1.0, 2.0]);
        let dir = tempfile::tempdir().unwrap();
        let m = evaluate(&t, &t).unwrap();
        write_metrics(dir.path().join("metrics.json"), &m).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
        assert_eq!(v["rmse_all"], 0.0);
        assert_eq!(v["per_step_csv"], "metrics_per_step.csv");
        let csv = fs::read_to_string(dir.path().join("metrics_per_step.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn obj_sequence_has_one_file_per_state() {
        let t = generate_trajectory(&GenConfig::new(Domain::Cloth, 1, 2, 0), 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_obj_sequence(&t, dir.path()).unwrap();
        assert!(dir.path().join("frame_00002.obj").exists());
    }
}
