//! Versioned text checkpoints: kernel name, structural dimensions, all
//! parameters in declared order, normalization statistics, and training data.

use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{HarnessError, Normalizer};
use crate::gpr::GprModel;
use crate::kernels::{AkParams, AkVariant, DklParams, GibbsParams, Kernel, LengthscaleGrid, RbfParams};
use crate::nn::MlpParams;

const MAGIC: &str = "akgp-checkpoint v1";

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" ")
}

pub fn save_checkpoint(path: &Path, model: &GprModel, normalizer: &Normalizer) -> Result<(), HarnessError> {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&format!("kernel {}\n", model.kernel().name()));
    out.push_str(&format!("in_dim {}\n", model.x_train().ncols()));
    match model.kernel() {
        Kernel::Rbf(_) => out.push_str("hidden 0\n"),
        Kernel::Ak(p) => {
            out.push_str(&format!("hidden {}\n", p.net.hidden_dim()));
            out.push_str(&format!("grid {} {} {}\n", p.grid.l_min(), p.grid.l_max(), p.grid.len()));
        }
        Kernel::Gibbs(p) => {
            out.push_str(&format!("hidden {}\n", p.net.hidden_dim()));
            out.push_str(&format!("bounds {} {}\n", p.l_min, p.l_max));
        }
        Kernel::Dkl(p) => {
            out.push_str(&format!("hidden {}\n", p.net.hidden_dim()));
            out.push_str(&format!("feature_dim {}\n", p.net.out_dim()));
        }
    }
    out.push_str(&format!("log_noise {}\n", model.log_noise()));
    let hyper = model.kernel().hyper_params();
    out.push_str(&format!("hyper {} {}\n", hyper.len(), join(hyper)));
    let net = model.kernel().net_params();
    out.push_str(&format!("net {} {}\n", net.len(), join(net)));
    out.push_str(&format!(
        "norm_shift {} {}\n",
        normalizer.shift.len(),
        join(normalizer.shift.iter().cloned())
    ));
    out.push_str(&format!(
        "norm_scale {} {}\n",
        normalizer.scale.len(),
        join(normalizer.scale.iter().cloned())
    ));
    out.push_str(&format!("y_mean {}\n", normalizer.y_mean));
    out.push_str(&format!("y_std {}\n", normalizer.y_std));
    let x = model.x_train();
    out.push_str(&format!("x_train {} {}\n", x.nrows(), x.ncols()));
    for i in 0..x.nrows() {
        out.push_str(&join(x.row(i).iter().cloned()));
        out.push('\n');
    }
    out.push_str(&format!(
        "y_train {} {}\n",
        model.y_train().len(),
        join(model.y_train().iter().cloned())
    ));

    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

struct Reader<'a> {
    lines: std::str::Lines<'a>,
    line_no: usize,
}

impl<'a> Reader<'a> {
    fn next(&mut self) -> Result<&'a str, HarnessError> {
        self.line_no += 1;
        self.lines
            .next()
            .ok_or_else(|| HarnessError::Checkpoint(format!("unexpected end of file at line {}", self.line_no)))
    }

    fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>, HarnessError> {
        let line = self.next()?;
        let mut fields = line.split_whitespace();
        match fields.next() {
            Some(k) if k == key => Ok(fields.collect()),
            other => Err(HarnessError::Checkpoint(format!(
                "line {}: expected key {key:?}, found {other:?}",
                self.line_no
            ))),
        }
    }

    fn floats(&mut self, key: &str) -> Result<Vec<f64>, HarnessError> {
        let fields = self.keyed(key)?;
        let count: usize = fields
            .first()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| HarnessError::Checkpoint(format!("line {}: bad count for {key}", self.line_no)))?;
        let values: Result<Vec<f64>, _> = fields[1..].iter().map(|s| s.parse::<f64>()).collect();
        let values = values
            .map_err(|_| HarnessError::Checkpoint(format!("line {}: bad float in {key}", self.line_no)))?;
        if values.len() != count {
            return Err(HarnessError::Checkpoint(format!(
                "line {}: {key} declared {count} values, found {}",
                self.line_no,
                values.len()
            )));
        }
        Ok(values)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(GprModel, Normalizer), HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let mut r = Reader { lines: text.lines(), line_no: 0 };
    if r.next()? != MAGIC {
        return Err(HarnessError::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }

    let kernel_name = r.keyed("kernel")?.first().map(|s| s.to_string()).unwrap_or_default();
    let in_dim: usize = r.keyed("in_dim")?[0]
        .parse()
        .map_err(|_| HarnessError::Checkpoint("bad in_dim".into()))?;
    let hidden: usize = r.keyed("hidden")?[0]
        .parse()
        .map_err(|_| HarnessError::Checkpoint("bad hidden".into()))?;

    let mut kernel = match kernel_name.as_str() {
        "rbf" => Kernel::Rbf(RbfParams::new(1.0, 1.0).map_err(HarnessError::Kernel)?),
        "ak" | "ak-weight" | "ak-mask" | "ak-nnx2" => {
            let fields = r.keyed("grid")?;
            let l_min: f64 = fields[0].parse().map_err(|_| HarnessError::Checkpoint("bad grid".into()))?;
            let l_max: f64 = fields[1].parse().map_err(|_| HarnessError::Checkpoint("bad grid".into()))?;
            let m: usize = fields[2].parse().map_err(|_| HarnessError::Checkpoint("bad grid".into()))?;
            let grid = LengthscaleGrid::new(l_min, l_max, m)?;
            let variant = match kernel_name.as_str() {
                "ak" => AkVariant::Full,
                "ak-weight" => AkVariant::WeightOnly,
                "ak-mask" => AkVariant::MaskOnly,
                _ => AkVariant::TwoNets,
            };
            let second_net = (variant == AkVariant::TwoNets).then(|| MlpParams::zeros(in_dim, hidden, m));
            Kernel::Ak(AkParams {
                log_amplitude: 0.0,
                grid,
                net: MlpParams::zeros(in_dim, hidden, m),
                second_net,
                variant,
            })
        }
        "gibbs" => {
            let fields = r.keyed("bounds")?;
            let l_min: f64 = fields[0].parse().map_err(|_| HarnessError::Checkpoint("bad bounds".into()))?;
            let l_max: f64 = fields[1].parse().map_err(|_| HarnessError::Checkpoint("bad bounds".into()))?;
            Kernel::Gibbs(GibbsParams {
                log_amplitude: 0.0,
                net: MlpParams::zeros(in_dim, hidden, 1),
                l_min,
                l_max,
            })
        }
        "dkl" => {
            let feature_dim: usize = r.keyed("feature_dim")?[0]
                .parse()
                .map_err(|_| HarnessError::Checkpoint("bad feature_dim".into()))?;
            Kernel::Dkl(DklParams {
                log_amplitude: 0.0,
                net: MlpParams::zeros(in_dim, hidden, feature_dim),
                log_base_lengthscale: 0.0,
            })
        }
        other => return Err(HarnessError::Checkpoint(format!("unknown kernel {other:?}"))),
    };

    let log_noise: f64 = r.keyed("log_noise")?[0]
        .parse()
        .map_err(|_| HarnessError::Checkpoint("bad log_noise".into()))?;
    let hyper = r.floats("hyper")?;
    let net = r.floats("net")?;
    kernel.set_hyper_params(&hyper)?;
    kernel.set_net_params(&net)?;

    let shift = r.floats("norm_shift")?;
    let scale = r.floats("norm_scale")?;
    let y_mean: f64 = r.keyed("y_mean")?[0]
        .parse()
        .map_err(|_| HarnessError::Checkpoint("bad y_mean".into()))?;
    let y_std: f64 = r.keyed("y_std")?[0]
        .parse()
        .map_err(|_| HarnessError::Checkpoint("bad y_std".into()))?;
    let normalizer = Normalizer { shift, scale, y_mean, y_std };

    let fields = r.keyed("x_train")?;
    let n: usize = fields[0].parse().map_err(|_| HarnessError::Checkpoint("bad x_train".into()))?;
    let d: usize = fields[1].parse().map_err(|_| HarnessError::Checkpoint("bad x_train".into()))?;
    if d != in_dim {
        return Err(HarnessError::Checkpoint(format!("x_train has {d} columns, in_dim is {in_dim}")));
    }
    let mut x_train = DMatrix::zeros(n, d);
    for i in 0..n {
        let row: Result<Vec<f64>, _> = r.next()?.split_whitespace().map(|s| s.parse::<f64>()).collect();
        let row = row.map_err(|_| HarnessError::Checkpoint(format!("bad x_train row {i}")))?;
        if row.len() != d {
            return Err(HarnessError::Checkpoint(format!("x_train row {i} has {} values", row.len())));
        }
        for (j, v) in row.iter().enumerate() {
            x_train[(i, j)] = *v;
        }
    }
    let y = r.floats("y_train")?;
    if y.len() != n {
        return Err(HarnessError::Checkpoint(format!("{} targets for {n} inputs", y.len())));
    }

    let mut model = GprModel::new(kernel, in_dim, 1.0)?;
    model.set_log_noise(log_noise);
    model.add_data(&x_train, &DVector::from_vec(y))?;
    Ok((model, normalizer))
}
