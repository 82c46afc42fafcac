//! Saturation-fit statistics, traffic KPIs and report files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::network::Network;
use crate::plant::TrajectoryLog;
use crate::ControlError;

/// Median with the even-length midpoint convention. NaN-free input assumed.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn check_pair(modeled: &[f64], simulated: &[f64]) -> Result<(), ControlError> {
    if modeled.is_empty() {
        return Err(ControlError::Metric("empty series".into()));
    }
    if modeled.len() != simulated.len() {
        return Err(ControlError::Metric(format!(
            "series lengths differ: {} vs {}",
            modeled.len(),
            simulated.len()
        )));
    }
    Ok(())
}

/// Median percent error of modeled against simulated values; positive means overestimation.
pub fn mpe(modeled: &[f64], simulated: &[f64]) -> Result<f64, ControlError> {
    check_pair(modeled, simulated)?;
    if let Some(i) = simulated.iter().position(|&s| s == 0.0) {
        return Err(ControlError::Metric(format!("simulated value {i} is zero")));
    }
    let pct: Vec<f64> = modeled.iter().zip(simulated).map(|(m, s)| (m - s) / s * 100.0).collect();
    Ok(median(&pct).expect("nonempty"))
}

/// Median absolute deviation between the two series, in their unit.
pub fn mad(modeled: &[f64], simulated: &[f64]) -> Result<f64, ControlError> {
    check_pair(modeled, simulated)?;
    let d: Vec<f64> = modeled.iter().zip(simulated).map(|(m, s)| (m - s).abs()).collect();
    Ok(median(&d).expect("nonempty"))
}

/// |j_test - j_ref| / |j_ref| in percent.
pub fn approximation_error(j_test: f64, j_ref: f64) -> Result<f64, ControlError> {
    if j_ref == 0.0 || !j_ref.is_finite() || !j_test.is_finite() {
        return Err(ControlError::Metric(format!("cannot compare {j_test} against reference {j_ref}")));
    }
    Ok((j_test - j_ref).abs() / j_ref.abs() * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Kpis {
    /// Mean network queue over the steps, veh.
    pub tmq: f64,
    /// Total vehicle-time in the network, h.
    pub att_total_h: f64,
    /// Vehicle-time per served vehicle, min.
    pub att_per_vehicle_min: f64,
    /// Excess over free-flow time per distance travelled, s/km.
    pub delay_s_per_km: f64,
    pub served: f64,
    /// Mean demand held outside full entry links, veh.
    pub mean_backlog: f64,
    /// Cumulative vehicles served after each step.
    pub cumulative_outflow: Vec<f64>,
}

/// KPIs over the post-step states of a run. `v_ff_kmh` sets free-flow time.
pub fn traffic_kpis(log: &TrajectoryLog, net: &Network, v_ff_kmh: f64) -> Result<Kpis, ControlError> {
    let n = log.steps();
    if n == 0 || log.states.len() != n + 1 || log.flows.len() != n || log.served.len() != n {
        return Err(ControlError::Metric("trajectory log is incomplete".into()));
    }
    if !(v_ff_kmh > 0.0) {
        return Err(ControlError::Metric(format!("free-flow speed {v_ff_kmh} must be positive")));
    }
    let queue_sum: f64 = log.states[1..].iter().map(|s| s.network_total()).sum();
    let tmq = queue_sum / n as f64;
    let vehicle_s = log.cycle * queue_sum;
    // Distance: every vehicle discharged from a link has travelled its length.
    let mut km = 0.0;
    for f in &log.flows {
        for z in 0..net.num_links() {
            let out: f64 = f.q[z].iter().sum::<f64>() + f.r[z].iter().sum::<f64>();
            km += out * log.cycle * net.links[z].length / 1000.0;
        }
    }
    let served = *log.served.last().expect("nonempty");
    let ff_s = km / v_ff_kmh * 3600.0;
    Ok(Kpis {
        tmq,
        att_total_h: vehicle_s / 3600.0,
        att_per_vehicle_min: if served > 0.0 { vehicle_s / served / 60.0 } else { 0.0 },
        delay_s_per_km: if km > 0.0 { (vehicle_s - ff_s) / km } else { 0.0 },
        served,
        mean_backlog: log.backlog.iter().sum::<f64>() / n as f64,
        cumulative_outflow: log.served.clone(),
    })
}

/// (modeled, simulated) saturation pairs in veh/h, for links and steps where both exist.
pub fn saturation_pairs(log: &TrajectoryLog, link: Option<usize>) -> (Vec<f64>, Vec<f64>) {
    let mut m = Vec::new();
    let mut s = Vec::new();
    for row in &log.saturation {
        for (z, &(sm, ss)) in row.iter().enumerate() {
            if link.is_some_and(|l| l != z) {
                continue;
            }
            if let (Some(a), Some(b)) = (sm, ss) {
                m.push(a * 3600.0);
                s.push(b * 3600.0);
            }
        }
    }
    (m, s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkFit {
    pub link: usize,
    pub mpe: f64,
    pub mad: f64,
    pub median_model: f64,
    pub median_sim: f64,
    pub observations: usize,
}

pub fn per_link_fit(log: &TrajectoryLog, net: &Network) -> Vec<LinkFit> {
    (0..net.num_links())
        .filter_map(|z| {
            let (m, s) = saturation_pairs(log, Some(z));
            if m.is_empty() {
                return None;
            }
            Some(LinkFit {
                link: z + 1,
                mpe: mpe(&m, &s).ok()?,
                mad: mad(&m, &s).ok()?,
                median_model: median(&m)?,
                median_sim: median(&s)?,
                observations: m.len(),
            })
        })
        .collect()
}

/// One report row per scenario and seed. No timings, so reruns compare byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: String,
    pub cell: String,
    pub mode: String,
    pub horizon: usize,
    pub envelopes: usize,
    pub seed: u64,
    pub tmq: f64,
    pub att_total_h: f64,
    pub att_per_vehicle_min: f64,
    pub delay_s_per_km: f64,
    pub served: f64,
    pub mean_backlog: f64,
    pub mpe: Option<f64>,
    pub mad: Option<f64>,
    pub solves: usize,
    pub faults: usize,
}

impl ReportRow {
    pub fn new(scenario: &str, cell: &str, horizon: usize, envelopes: usize, log: &TrajectoryLog, kpis: &Kpis) -> Self {
        let (m, s) = saturation_pairs(log, None);
        let (mpe_v, mad_v) = if m.is_empty() { (None, None) } else { (mpe(&m, &s).ok(), mad(&m, &s).ok()) };
        ReportRow {
            scenario: scenario.into(),
            cell: cell.into(),
            mode: log.mode.clone(),
            horizon,
            envelopes,
            seed: log.seed,
            tmq: kpis.tmq,
            att_total_h: kpis.att_total_h,
            att_per_vehicle_min: kpis.att_per_vehicle_min,
            delay_s_per_km: kpis.delay_s_per_km,
            served: kpis.served,
            mean_backlog: kpis.mean_backlog,
            mpe: mpe_v,
            mad: mad_v,
            solves: log.diagnostics.iter().filter(|d| d.solved).count(),
            faults: log.faults(),
        }
    }
}

pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<(), ControlError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>, ControlError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

pub fn write_per_link(path: &Path, fits: &[LinkFit]) -> Result<(), ControlError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["link", "mpe_pct", "mad_vph", "median_model_vph", "median_sim_vph", "observations"])?;
    for f in fits {
        w.write_record([
            f.link.to_string(),
            f.mpe.to_string(),
            f.mad.to_string(),
            f.median_model.to_string(),
            f.median_sim.to_string(),
            f.observations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Two-column series: step, cumulative vehicles served.
pub fn write_outflow(path: &Path, cumulative: &[f64]) -> Result<(), ControlError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "cumulative_outflow"])?;
    for (k, v) in cumulative.iter().enumerate() {
        w.write_record([(k + 1).to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and sample standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0]), Some(3.0));
        assert_eq!(median(&[4.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 10.0]), Some(3.0));
    }

    #[test]
    fn fit_statistics() {
        assert_eq!(mpe(&[1600.0], &[1600.0]).unwrap(), 0.0);
        assert_eq!(mpe(&[1650.0, 1500.0], &[1600.0, 1600.0]).unwrap(), -1.5625);
        assert_eq!(mad(&[1650.0, 1500.0], &[1600.0, 1600.0]).unwrap(), 75.0);
        assert!(mpe(&[], &[]).is_err());
        assert!(mpe(&[1.0], &[0.0]).is_err());
        assert!(mad(&[1.0, 2.0], &[1.0]).is_err());
        assert!(mpe(&[1700.0], &[1600.0]).unwrap() > 0.0);
    }

    #[test]
    fn approximation() {
        assert_eq!(approximation_error(5.0, 5.0).unwrap(), 0.0);
        assert!(approximation_error(1.0, 0.0).is_err());
    }

    #[test]
    fn spread() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
    }
}
