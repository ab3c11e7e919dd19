//! Finite-difference verification of every differentiable op and of the
//! whole fused forward pass, in double precision.

use rand::Rng as _;

use crate::autodiff::{gradcheck, gradcheck_scaled, GradcheckReport, ParameterStore, Tape, Tensor, Var};
use crate::corpus::{DialectTag, Sample, SourceTag};
use crate::error::Result;
use crate::graph::GraphConfig;
use crate::model::{
    Ablation, Example, FusionModel, ModelConfig, PrecomputedEmbeddings, TextEncoderConfig, ToyTransformerConfig, Vocab,
};
use crate::rng::{Rng, SeedStream};

/// Maximum relative error accepted by the suite.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct OpCheck {
    pub name: String,
    pub report: GradcheckReport,
}

/// Values in `±[0.1, 1]`, which keeps relu inputs away from the kink.
fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).expect("positive shape")
}

fn inputs(rng: &mut Rng, shapes: &[&[usize]]) -> ParameterStore<f64> {
    let mut s = ParameterStore::new();
    for (i, shape) in shapes.iter().enumerate() {
        s.add(&format!("x{i}"), random_tensor(rng, shape)).expect("unique names");
    }
    s
}

fn vars(tape: &mut Tape<f64>, st: &ParameterStore<f64>) -> Vec<Var> {
    st.iter().map(|(id, _)| tape.param(st, id)).collect()
}

type OpFn = fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

/// Gradient reversal strength used by the reversal check.
const REVERSAL_LAMBDA: f64 = 0.7;

fn op_cases() -> Vec<(&'static str, Vec<&'static [usize]>, OpFn)> {
    vec![
        ("matmul", vec![&[3, 4], &[4, 2]], |t, v| t.matmul(v[0], v[1])),
        ("add", vec![&[2, 3], &[2, 3]], |t, v| t.add(v[0], v[1])),
        ("add_row", vec![&[3, 4], &[4]], |t, v| t.add_row(v[0], v[1])),
        ("mul", vec![&[2, 3], &[2, 3]], |t, v| t.mul(v[0], v[1])),
        ("mul_row", vec![&[3, 4], &[4]], |t, v| t.mul_row(v[0], v[1])),
        ("scale", vec![&[2, 3]], |t, v| Ok(t.scale(v[0], -1.7))),
        ("relu", vec![&[3, 3]], |t, v| Ok(t.relu(v[0]))),
        ("mean_pool_rows", vec![&[4, 3]], |t, v| t.mean_pool_rows(v[0])),
        ("softmax_rows", vec![&[3, 4]], |t, v| t.softmax_rows(v[0])),
        ("layer_norm_rows", vec![&[3, 5]], |t, v| t.layer_norm_rows(v[0], 1e-5)),
        ("cross_entropy_with_logits", vec![&[4, 3]], |t, v| {
            t.cross_entropy_with_logits(v[0], &[0, 2, 1, 2])
        }),
        ("sum", vec![&[2, 3]], |t, v| Ok(t.sum(v[0]))),
        ("transpose", vec![&[2, 3]], |t, v| t.transpose(v[0])),
        ("slice_cols", vec![&[3, 5]], |t, v| t.slice_cols(v[0], 1, 3)),
        ("slice_rows", vec![&[4, 3]], |t, v| t.slice_rows(v[0], 1, 2)),
        ("concat_cols", vec![&[2, 3], &[2, 2]], |t, v| t.concat_cols(&[v[0], v[1]])),
        ("concat_rows", vec![&[3], &[2, 3]], |t, v| t.concat_rows(&[v[0], v[1]])),
        ("reshape", vec![&[2, 3]], |t, v| t.reshape(v[0], &[6])),
        ("gather_rows", vec![&[4, 3]], |t, v| t.gather_rows(v[0], &[2, 0, 2])),
    ]
}

fn tiny_config(text: TextEncoderConfig) -> ModelConfig {
    ModelConfig {
        text,
        gcn_layers: 2,
        gcn_hidden: 3,
        fusion_dim: 4,
        fusion_heads: 2,
        classifier_hidden: 5,
        dialect_head: true,
        grl_lambda: 0.5,
        ablation: Ablation::Full,
    }
}

fn probe_sample() -> Sample {
    Sample {
        id: "probe".into(),
        text: "ذهب الولد إلى المدرسة في ٣ أيام".into(),
        label: 1,
        dialect: DialectTag::Gulf,
        source: SourceTag::Synthetic,
        parent_id: Some("probe-msa".into()),
    }
}

fn check_model(name: &str, model: &FusionModel<f64>, ex: &Example, out: &mut Vec<OpCheck>) -> Result<()> {
    let label = usize::from(ex.label);
    let dialect = ex.dialect.index();
    let mut store = model.params.clone();
    let task = gradcheck(
        |tape, st| {
            let m = model.with_params(st.clone())?;
            let f = m.represent(tape, ex)?;
            m.task_logits(tape, f.z_f)
        },
        &mut store,
        TOLERANCE,
    )?;
    out.push(OpCheck {
        name: format!("{name}: task logits"),
        report: task,
    });
    let joint = gradcheck(
        |tape, st| {
            let m = model.with_params(st.clone())?;
            let f = m.represent(tape, ex)?;
            let logits = m.task_logits(tape, f.z_f)?;
            let task = tape.cross_entropy_with_logits(logits, &[label])?;
            let dl = m.dialect_logits(tape, f.z_f, None)?;
            let adv = tape.cross_entropy_with_logits(dl, &[dialect])?;
            tape.add(task, adv)
        },
        &mut store,
        TOLERANCE,
    )?;
    out.push(OpCheck {
        name: format!("{name}: task + dialect loss"),
        report: joint,
    });
    Ok(())
}

/// Runs every op check and the fused-model checks with inputs drawn from `seed`.
pub fn verification_suite(seed: u64) -> Result<Vec<OpCheck>> {
    let seeds = SeedStream::new(seed);
    let mut out = Vec::new();
    for (name, shapes, f) in op_cases() {
        let mut rng = seeds.rng(&format!("verify/{name}"));
        let mut store = inputs(&mut rng, &shapes);
        let report = gradcheck(
            |tape, st| {
                let v = vars(tape, st);
                f(tape, &v)
            },
            &mut store,
            TOLERANCE,
        )?;
        out.push(OpCheck {
            name: name.to_owned(),
            report,
        });
    }
    // identity forward, so the expected gradient is -lambda times the numeric one
    let mut rng = seeds.rng("verify/grad_reverse");
    let mut store = inputs(&mut rng, &[&[2, 3]]);
    let report = gradcheck_scaled(
        |tape, st| {
            let v = vars(tape, st);
            tape.grad_reverse(v[0], REVERSAL_LAMBDA)
        },
        &mut store,
        TOLERANCE,
        -REVERSAL_LAMBDA,
    )?;
    out.push(OpCheck {
        name: "grad_reverse".into(),
        report,
    });

    let sample = probe_sample();
    let graph = GraphConfig::default();
    let toy = tiny_config(TextEncoderConfig::ToyTransformer(ToyTransformerConfig {
        hidden: 4,
        blocks: 1,
        heads: 2,
        max_len: 10,
        ffn_hidden: 6,
    }));
    let model = FusionModel::<f64>::new(toy, Some(Vocab::build([&sample])), seeds.derive("verify/toy"))?;
    let ex = model.prepare(&sample, &graph, None)?;
    check_model("fused model, toy text encoder", &model, &ex, &mut out)?;

    let mut rng = seeds.rng("verify/embedding");
    let mut emb = PrecomputedEmbeddings::default();
    emb.insert(&sample.id, random_tensor(&mut rng, &[6]).to_f64_vec())?;
    let pre = tiny_config(TextEncoderConfig::Precomputed { dim: 6 });
    let model = FusionModel::<f64>::new(pre, None, seeds.derive("verify/precomputed"))?;
    let ex = model.prepare(&sample, &graph, Some(&emb))?;
    check_model("fused model, precomputed text", &model, &ex, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_for_one_seed() {
        let checks = verification_suite(0).unwrap();
        assert_eq!(checks.len(), op_cases().len() + 5);
        for c in &checks {
            assert!(c.report.passed, "{}: {:?}", c.name, c.report);
        }
    }
}
