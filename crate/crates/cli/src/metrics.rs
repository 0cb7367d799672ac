//! One JSON object per epoch, one line each, keys in a fixed order:
//! `epoch, lr, cost_supervised, cost_denoise_l0 … cost_denoise_lL,
//! train_err, val_err`. Error rates are fractions; absent ones are `null`.

use ladder_core::training::EpochMetrics;
use serde_json::{Map, Value};

pub fn to_line(m: &EpochMetrics) -> String {
    let mut obj = Map::new();
    obj.insert("epoch".into(), m.epoch.into());
    obj.insert("lr".into(), m.lr.into());
    obj.insert("cost_supervised".into(), m.cost_supervised.into());
    for (l, c) in m.cost_denoise.iter().enumerate() {
        obj.insert(format!("cost_denoise_l{l}"), (*c).into());
    }
    obj.insert("train_err".into(), m.train_err.map_or(Value::Null, Value::from));
    obj.insert("val_err".into(), m.val_err.map_or(Value::Null, Value::from));
    Value::Object(obj).to_string()
}

/// Reads back one line written by [`to_line`].
pub fn from_line(line: &str) -> Result<EpochMetrics, String> {
    let v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let obj = v.as_object().ok_or("metrics line is not an object")?;
    let num = |k: &str| obj.get(k).and_then(Value::as_f64).ok_or_else(|| format!("missing `{k}`"));
    let opt = |k: &str| match obj.get(k) {
        Some(Value::Null) => Ok(None),
        Some(v) => v.as_f64().map(Some).ok_or_else(|| format!("`{k}` is not a number")),
        None => Err(format!("missing `{k}`")),
    };
    let mut cost_denoise = Vec::new();
    while let Some(c) = obj.get(&format!("cost_denoise_l{}", cost_denoise.len())) {
        cost_denoise.push(c.as_f64().ok_or("denoising cost is not a number")?);
    }
    let cost_supervised = num("cost_supervised")?;
    Ok(EpochMetrics {
        epoch: num("epoch")? as usize,
        lr: num("lr")?,
        cost_supervised,
        cost_total: cost_supervised + cost_denoise.iter().sum::<f64>(),
        cost_denoise,
        train_err: opt("train_err")?,
        val_err: opt("val_err")?,
    })
}
