//! Auto-encoder baselines. The encoder output is not normalized. The
//! reconstruction target is the input window and static vector, or, in
//! forecast mode, the next `history` rows `t+1 ..= t+history` of the stay
//! together with the static vector.

use ncl_autograd::{AdamConfig, AdamState, Graph, NodeId, Tensor};

use super::{apply_adam, check_finite, lr_schedule, Method, Sampler, TrainConfig};
use crate::data::{Dataset, Split};
use crate::encoder::{stack_rows, stack_windows, Checkpoint, Decoder, Encoder};
use crate::error::{config_err, data_err, Result};
use crate::rng::{stream, streams};

pub struct Seq2SeqOutcome {
    pub checkpoint: Checkpoint,
    pub losses: Vec<f64>,
}

/// Rows `t+1 ..= t+history` of stay `s`.
pub fn forecast_target(ds: &Dataset, s: usize, t: usize, history: usize) -> Result<Tensor> {
    let stay = &ds.stays[s];
    if t + history >= stay.len() {
        return Err(data_err(format!(
            "forecast target for hour {t} runs past the end of stay {}",
            stay.stay_id
        )));
    }
    let c = stay.series.last_dim();
    let data = stay.series.data()[(t + 1) * c..(t + 1 + history) * c].to_vec();
    Ok(Tensor::new(vec![history, c], data)?)
}

/// Mean squared error over every series and static cell:
/// `(sum (series_hat - series)^2 + sum (static_hat - static)^2) / cells`.
pub fn mse_loss(
    g: &mut Graph,
    series_hat: NodeId,
    series: &Tensor,
    static_hat: Option<NodeId>,
    statics: &Tensor,
) -> Result<NodeId> {
    let target = g.constant(series.clone());
    let diff = g.sub(series_hat, target)?;
    let sq = g.mul(diff, diff)?;
    let mut total = g.sum(sq, None)?;
    let mut cells = series.len();
    if let Some(sh) = static_hat {
        let target = g.constant(statics.clone());
        let diff = g.sub(sh, target)?;
        let sq = g.mul(diff, diff)?;
        let s = g.sum(sq, None)?;
        total = g.add(total, s)?;
        cells += statics.len();
    }
    Ok(g.scale(total, 1.0 / cells as f64)?)
}

/// Trains encoder and mirrored decoder to reconstruct (or forecast) windows.
pub fn train_seq2seq(ds: &Dataset, cfg: &TrainConfig, forecast: bool) -> Result<Seq2SeqOutcome> {
    cfg.validate()?;
    let expected = if forecast { Method::AeForecast } else { Method::Ae };
    if cfg.method != expected {
        return Err(config_err(format!("method {} does not match {expected}", cfg.method)));
    }
    let h = cfg.history;
    let pool: Vec<(usize, usize)> = ds
        .sample_pool(&ds.split_indices(Split::Train))
        .into_iter()
        .filter(|&(s, t)| !forecast || t + h < ds.stays[s].len())
        .collect();
    let sampler = Sampler::new(pool).map_err(|_| data_err("no training anchor has a complete forecast target"))?;

    let encoder = Encoder::new(cfg.encoder.clone(), ds.n_channels(), ds.static_dim(), false)?;
    let decoder = Decoder::mirror(&encoder, h);
    let mut init_rng = stream(cfg.seed, streams::INIT);
    let mut enc_params = encoder.init(&mut init_rng);
    let mut dec_params = decoder.init(&mut init_rng, false);
    let adam_cfg = AdamConfig {
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        ..AdamConfig::default()
    };
    let mut adam_enc = AdamState::new(&enc_params.tensors());
    let mut adam_dec = AdamState::new(&dec_params.tensors());
    let mut rng = stream(cfg.seed, streams::SAMPLER);
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let lr = lr_schedule(step, cfg);
        let mut windows = Vec::with_capacity(cfg.batch_size);
        let mut targets = Vec::with_capacity(cfg.batch_size);
        let mut statics = Vec::with_capacity(cfg.batch_size);
        for (s, t) in sampler.draw_many(cfg.batch_size, &mut rng) {
            let w = ds.window(s, t, h)?;
            if forecast {
                targets.push(forecast_target(ds, s, t, h)?);
            }
            windows.push(w.window);
            statics.push(w.static_features);
        }
        let wr: Vec<&Tensor> = windows.iter().collect();
        let x_t = stack_windows(&wr)?;
        let target = if forecast {
            stack_windows(&targets.iter().collect::<Vec<_>>())?
        } else {
            x_t.clone()
        };
        let s_t = stack_rows(&statics.iter().map(Vec::as_slice).collect::<Vec<_>>())?;

        let mut g = Graph::new();
        let e = enc_params.bind(&mut g, true);
        let d = dec_params.bind(&mut g, true);
        let x = g.constant(x_t);
        let s = g.constant(s_t.clone());
        let z = encoder.forward(&mut g, &e, x, s)?;
        let (series_hat, static_hat) = decoder.forward(&mut g, &d, z)?;
        let loss = mse_loss(&mut g, series_hat, &target, static_hat, &s_t)?;
        let value = g.value(loss).item()?;
        check_finite(step, "reconstruction loss", value, String::new)?;
        losses.push(value);
        let grads = g.backward(loss)?;
        apply_adam(&mut enc_params, &e, &grads, &mut adam_enc, lr, &adam_cfg)?;
        apply_adam(&mut dec_params, &d, &grads, &mut adam_dec, lr, &adam_cfg)?;
    }

    let mut ck = Checkpoint::new(expected.as_str(), h, encoder, enc_params);
    ck.step = cfg.steps;
    ck.decoder = Some((decoder, dec_params));
    Ok(Seq2SeqOutcome { checkpoint: ck, losses })
}
