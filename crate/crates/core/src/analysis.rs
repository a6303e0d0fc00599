//! Parameter and operation accounting, and a model-wide gradient check.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{analytic_param_count, VesrNet, VesrNetConfig};
use crate::tensor::{Element, Tensor};
use crate::train::l1_loss;

/// Header line stating how operations are counted.
pub const FLOP_CONVENTION: &str =
    "1 multiply-accumulate = 2 FLOPs; elementwise operations count once per element";

/// One module of the network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountRow {
    pub path: String,
    pub params: u64,
    pub macs: u64,
    pub elementwise: u64,
}

impl CountRow {
    pub fn flops(&self) -> u64 {
        2 * self.macs + self.elementwise
    }
}

/// Per-module parameter and operation counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountReport {
    pub rows: Vec<CountRow>,
    /// `T x 3 x H x W` input the operation counts refer to, if any.
    pub input: Option<[usize; 4]>,
    /// Closed-form parameter count derived from the configuration alone.
    pub analytic_params: u64,
}

impl CountReport {
    pub fn total_params(&self) -> u64 {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn total_macs(&self) -> u64 {
        self.rows.iter().map(|r| r.macs).sum()
    }

    pub fn total_elementwise(&self) -> u64 {
        self.rows.iter().map(|r| r.elementwise).sum()
    }

    pub fn total_flops(&self) -> u64 {
        self.rows.iter().map(CountRow::flops).sum()
    }

    /// FLOPs divided evenly over the input frames.
    pub fn flops_per_input_frame(&self) -> Option<u64> {
        self.input.map(|[t, ..]| self.total_flops() / t as u64)
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        match self.input {
            Some([t, c, h, w]) => {
                writeln!(s, "# input {t}x{c}x{h}x{w}; {FLOP_CONVENTION}").unwrap();
            }
            None => writeln!(s, "# parameters only").unwrap(),
        }
        let width = self.rows.iter().map(|r| r.path.len()).max().unwrap_or(0).max(8);
        writeln!(s, "{:<width$} {:>12} {:>16} {:>16}", "module", "params", "macs", "flops").unwrap();
        for r in &self.rows {
            writeln!(s, "{:<width$} {:>12} {:>16} {:>16}", r.path, r.params, r.macs, r.flops()).unwrap();
        }
        writeln!(
            s,
            "{:<width$} {:>12} {:>16} {:>16}",
            "total",
            self.total_params(),
            self.total_macs(),
            self.total_flops()
        )
        .unwrap();
        writeln!(s, "analytic params: {}", self.analytic_params).unwrap();
        if let Some(per_frame) = self.flops_per_input_frame() {
            writeln!(
                s,
                "GFLOPs per forward: {:.2} (all frames), {:.2} (per input frame); GMACs: {:.2}",
                self.total_flops() as f64 / 1e9,
                per_frame as f64 / 1e9,
                self.total_macs() as f64 / 1e9
            )
            .unwrap();
        }
        s
    }

    /// `module,params,macs,elementwise,flops` rows followed by a `total` row.
    pub fn csv(&self) -> String {
        let mut s = String::from("module,params,macs,elementwise,flops\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{},{}", r.path, r.params, r.macs, r.elementwise, r.flops()).unwrap();
        }
        writeln!(
            s,
            "total,{},{},{},{}",
            self.total_params(),
            self.total_macs(),
            self.total_elementwise(),
            self.total_flops()
        )
        .unwrap();
        s
    }
}

/// Reads the `total` row of [`CountReport::csv`] output as
/// `(params, macs, elementwise, flops)`.
pub fn parse_csv_totals(csv: &str) -> Result<(u64, u64, u64, u64)> {
    let line = csv
        .lines()
        .find(|l| l.starts_with("total,"))
        .ok_or_else(|| Error::Format("CSV has no total row".into()))?;
    let v: Vec<u64> = line
        .split(',')
        .skip(1)
        .map(|f| f.parse().map_err(|_| Error::Format(format!("bad total field {f:?}"))))
        .collect::<Result<_>>()?;
    match v[..] {
        [p, m, e, f] => Ok((p, m, e, f)),
        _ => Err(Error::Format(format!("total row has {} fields", v.len()))),
    }
}

/// Module paths in forward order.
fn module_paths<T: Element>(net: &VesrNet<T>) -> Vec<String> {
    let block_name = |prefix: &str, i: usize| {
        let kind = if net.config.use_carb { "carb" } else { "res" };
        format!("{prefix}.{kind}{i}")
    };
    let mut paths = vec!["encoder.conv1".to_string()];
    paths.extend((0..net.encoder.len()).map(|i| block_name("encoder", i)));
    if net.align.is_some() {
        paths.push("align".into());
    }
    if net.snl.is_some() {
        paths.push("fusion.snl".into());
    }
    paths.push("fusion.conv9".into());
    paths.extend((0..net.recon.len()).map(|i| block_name("recon", i)));
    paths.extend(["recon.conv31", "recon.conv33", "recon.conv35", "recon.conv36"].map(String::from));
    paths
}

fn params_under<T: Element>(net: &VesrNet<T>, path: &str) -> u64 {
    let prefix = format!("{path}.");
    net.params
        .iter()
        .filter(|(n, _)| n.starts_with(&prefix))
        .map(|(_, t)| t.numel() as u64)
        .sum()
}

/// Learnable scalars per module. The rows cover every parameter exactly once.
pub fn count_params<T: Element>(net: &VesrNet<T>) -> CountReport {
    let rows = module_paths(net)
        .into_iter()
        .map(|path| CountRow {
            params: params_under(net, &path),
            path,
            macs: 0,
            elementwise: 0,
        })
        .collect();
    CountReport {
        rows,
        input: None,
        analytic_params: analytic_param_count(&net.config) as u64,
    }
}

/// Operations of one forward pass on `T x 3 x h x w` frames, `T` taken from
/// the configuration.
pub fn count_flops<T: Element>(net: &VesrNet<T>, h: usize, w: usize) -> Result<CountReport> {
    net.check_input(&[net.config.n_frames, 3, h, w])?;
    let cfg = &net.config;
    let (t, c) = (cfg.n_frames as u64, cfg.channels as u64);
    let hw = (h * w) as u64;
    let mut report = count_params(net);
    report.input = Some([cfg.n_frames, 3, h, w]);
    let mut enc = net.encoder.iter();
    let mut rec = net.recon.iter();
    for row in &mut report.rows {
        let (macs, ew) = match row.path.as_str() {
            "encoder.conv1" => (t * net.conv1.macs(h, w), t * c * hw),
            p if p.starts_with("encoder.") => {
                let b = enc.next().expect("one row per encoder block");
                (t * b.macs(h, w), t * b.elementwise_ops(h, w))
            }
            "align" => {
                let a = net.align.as_ref().expect("row exists only with alignment");
                // leaky ReLUs after the four downsampling convolutions
                let pyr_ew = 2 * c * (hw / 4 + hw / 16);
                (
                    t * a.pyramid_macs(h, w) + (t - 1) * a.align_macs(h, w),
                    t * pyr_ew + (t - 1) * a.align_elementwise_ops(h, w),
                )
            }
            "fusion.snl" => {
                let s = net.snl.as_ref().expect("row exists only with fusion attention");
                let dims = [cfg.n_frames, cfg.channels, h, w];
                (s.macs(dims), s.elementwise_ops(dims))
            }
            "fusion.conv9" => (net.conv9.macs(h, w), c * hw),
            p if p.starts_with("recon.carb") || p.starts_with("recon.res") => {
                let b = rec.next().expect("one row per reconstruction block");
                (b.macs(h, w), b.elementwise_ops(h, w))
            }
            "recon.conv31" => (net.conv31.macs(h, w), 4 * c * hw),
            "recon.conv33" => (net.conv33.macs(2 * h, 2 * w), 2 * c * 4 * hw),
            "recon.conv35" => (net.conv35.macs(4 * h, 4 * w), c / 2 * 16 * hw),
            // output conv plus the separable bicubic base and its addition
            "recon.conv36" => (net.conv36.macs(4 * h, 4 * w) + 3 * 8 * 16 * hw, 3 * 16 * hw),
            other => unreachable!("unexpected module {other}"),
        };
        row.macs = macs;
        row.elementwise = ew;
    }
    Ok(report)
}

/// One sampled parameter scalar of [`gradcheck_model`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradSample {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
    /// Finite-difference step of `numeric`.
    pub step: f64,
}

impl GradSample {
    /// Parameters feeding the bilinear-sampling alignment path.
    pub fn is_sampling_path(&self) -> bool {
        self.name.starts_with("align.")
    }

    pub fn tolerance(&self) -> f64 {
        if self.is_sampling_path() {
            GRADCHECK_TOL_ALIGN
        } else {
            GRADCHECK_TOL_CORE
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub samples: Vec<GradSample>,
    /// Draws discarded because a ReLU, L1 or bilinear kink lay within every
    /// tried step of the sampled value.
    pub kinks_skipped: usize,
    pub max_rel_err: f64,
    /// Worst error outside the alignment module.
    pub max_rel_err_core: f64,
    /// Worst error inside the alignment module.
    pub max_rel_err_align: f64,
}

/// Tolerance for parameters outside the alignment module.
pub const GRADCHECK_TOL_CORE: f64 = 1e-4;
/// Tolerance for alignment parameters, whose gradients pass through
/// bilinear sampling.
pub const GRADCHECK_TOL_ALIGN: f64 = 1e-3;
/// Steps tried in order. Smaller steps only come into play when the larger
/// one straddles a kink.
const FD_STEPS: [f64; 2] = [1e-4, 1e-5];
/// Forward and backward slopes at `h`, or central differences at `h` and
/// `h / 2`, disagreeing by more than this (relative) mark a kink within `h`.
const KINK_TOL: f64 = 2e-4;
/// Relative errors are taken against at least this magnitude. Difference
/// quotients carry roundoff near 1e-10, so ratios against smaller
/// gradients measure noise.
const GRAD_FLOOR: f64 = 1e-5;

/// Input side used by [`gradcheck_model`].
pub const GRADCHECK_SIZE: usize = 8;

/// Width-8 variant of the tiny configuration, small enough for
/// finite differences over the whole network.
pub fn gradcheck_config() -> VesrNetConfig {
    VesrNetConfig {
        channels: 8,
        reduction: 4,
        align_groups: 2,
        ..VesrNetConfig::tiny()
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_FLOOR)
}

/// Compares analytic and central-difference gradients of the L1 loss with
/// respect to `samples` parameter scalars, in f64, on random `8 x 8` frames.
///
/// Draws cycle through the parameter tensors so each tensor is hit before
/// any is hit twice. Displacement-head biases get fractional values so the
/// sampling positions sit away from pixel centres, where bilinear
/// interpolation has kinks. A draw that fails the [`KINK_TOL`] consistency
/// test for every `h` in [`FD_STEPS`] sits on a kink, where no derivative
/// exists; it is counted and replaced.
pub fn gradcheck_model(cfg: &VesrNetConfig, seed: u64, samples: usize) -> Result<GradcheckReport> {
    if samples == 0 {
        return Err(Error::Config("gradcheck needs at least one sampled parameter".into()));
    }
    let mut net = VesrNet::<f64>::new(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
    for id in net.params.ids().collect::<Vec<_>>() {
        if net.params.name(id).ends_with("warp_head.bias") {
            for v in net.params.get_mut(id).data_mut() {
                *v = rng.random_range(0.2..0.8) * if rng.random() { 1.0 } else { -1.0 };
            }
        }
    }
    let s = GRADCHECK_SIZE;
    let frames = Tensor::from_fn(&[cfg.n_frames, 3, s, s], |_| rng.random_range(0.0..1.0));
    let target = Tensor::from_fn(&[3, 4 * s, 4 * s], |_| rng.random_range(0.0..1.0));
    let target_var = Var::constant(target);

    let tape = Tape::new();
    let (bound, out) = net.forward_tracked(&tape, &frames)?;
    let mut grads = tape.backward(&l1_loss(&out, &target_var)?)?;
    let analytic: Vec<Tensor<f64>> = bound.vars().iter().map(|v| grads.take(v)).collect();

    let loss_at = |net: &VesrNet<f64>| -> Result<f64> {
        let out = net.forward(&net.params.bind_constants(), &Var::constant(frames.clone()))?;
        l1_loss(&out, &target_var)?.value().item()
    };
    let base = loss_at(&net)?;
    let ids: Vec<_> = net.params.ids().collect();
    let mut report = GradcheckReport {
        samples: Vec::with_capacity(samples),
        kinks_skipped: 0,
        max_rel_err: 0.0,
        max_rel_err_core: 0.0,
        max_rel_err_align: 0.0,
    };
    let max_draws = 4 * samples;
    let mut draw = 0;
    while report.samples.len() < samples {
        if draw == max_draws {
            return Err(Error::Gradcheck(format!(
                "only {} of {samples} draws were free of kinks",
                report.samples.len()
            )));
        }
        let id = ids[draw % ids.len()];
        draw += 1;
        let index = rng.random_range(0..net.params.get(id).numel());
        let original = net.params.get(id).data()[index];
        let mut smooth = None;
        let mut at = |v: f64| -> Result<f64> {
            net.params.get_mut(id).data_mut()[index] = v;
            let l = loss_at(&net);
            net.params.get_mut(id).data_mut()[index] = original;
            l
        };
        for h in FD_STEPS {
            let (plus, minus) = (at(original + h)?, at(original - h)?);
            let (half_plus, half_minus) = (at(original + h / 2.0)?, at(original - h / 2.0)?);
            let one_sided = rel((plus - base) / h, (base - minus) / h);
            let (wide, narrow) = ((plus - minus) / (2.0 * h), (half_plus - half_minus) / h);
            if one_sided <= KINK_TOL && rel(wide, narrow) <= KINK_TOL {
                // Richardson extrapolation cancels the second-order term.
                smooth = Some(((4.0 * narrow - wide) / 3.0, h));
                break;
            }
        }
        let Some((numeric, step)) = smooth else {
            report.kinks_skipped += 1;
            continue;
        };
        let a = analytic[id.index()].data()[index];
        let sample = GradSample {
            name: net.params.name(id).to_owned(),
            index,
            analytic: a,
            numeric,
            rel_err: rel(a, numeric),
            step,
        };
        let slot = if sample.is_sampling_path() {
            &mut report.max_rel_err_align
        } else {
            &mut report.max_rel_err_core
        };
        *slot = slot.max(sample.rel_err);
        report.max_rel_err = report.max_rel_err.max(sample.rel_err);
        report.samples.push(sample);
    }
    let bad: Vec<String> = report
        .samples
        .iter()
        .filter(|s| s.rel_err > s.tolerance())
        .map(|s| format!("{}[{}] ({:.2e})", s.name, s.index, s.rel_err))
        .collect();
    if !bad.is_empty() {
        return Err(Error::Gradcheck(format!("relative error above tolerance at {}", bad.join(", "))));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Preset;

    #[test]
    fn rows_cover_every_parameter_once() {
        for p in Preset::ALL {
            let cfg = p.config();
            if cfg.channels > 16 {
                continue;
            }
            let net = VesrNet::<f32>::new(&cfg, 0).unwrap();
            let r = count_params(&net);
            assert_eq!(r.total_params(), net.param_count() as u64);
            assert_eq!(r.total_params(), r.analytic_params);
        }
    }

    #[test]
    fn conv1_operation_count_on_one_frame() {
        let cfg = VesrNetConfig {
            channels: 128,
            ..VesrNetConfig::tiny()
        };
        let net = VesrNet::<f32>::new(&cfg, 0).unwrap();
        assert_eq!(2 * net.conv1.macs(64, 64), 28_311_552);
    }

    #[test]
    fn zero_samples_is_an_error() {
        assert!(matches!(gradcheck_model(&VesrNetConfig::tiny(), 0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn short_gradcheck_passes() {
        let r = gradcheck_model(&gradcheck_config(), 3, 40).unwrap();
        assert_eq!(r.samples.len(), 40);
        assert!(r.samples.iter().all(|s| s.rel_err <= s.tolerance()));
        assert!(r.max_rel_err_core <= GRADCHECK_TOL_CORE);
    }

    #[test]
    fn csv_totals_parse_back() {
        let net = VesrNet::<f32>::new(&VesrNetConfig::tiny(), 0).unwrap();
        let r = count_flops(&net, 16, 16).unwrap();
        let (p, m, e, f) = parse_csv_totals(&r.csv()).unwrap();
        assert_eq!((p, m, e, f), (r.total_params(), r.total_macs(), r.total_elementwise(), r.total_flops()));
    }
}
