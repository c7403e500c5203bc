use std::collections::BTreeMap;

use serde::Serialize;

use super::{compute_metrics, DrbseRun, Metrics, Outlier};
use crate::admm::{Phase, StageOutcome};
use crate::{NetworkCase, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BusEstimate {
    pub id: usize,
    pub v_est: Option<f64>,
    pub theta_est: Option<f64>,
    pub v_true: f64,
    pub theta_true: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSummary {
    pub stage: u8,
    pub iterations: usize,
    pub converged: bool,
    pub final_delta: f64,
    pub trace_path: Option<String>,
}

/// Traffic from one area to another within one phase.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MessageStat {
    pub phase: Phase,
    pub from: usize,
    pub to: usize,
    pub count: usize,
    pub floats: usize,
    pub bytes: usize,
}

/// Totals over the whole run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportBus {
    pub messages: usize,
    pub bytes: usize,
}

/// Serializable outcome of one distributed run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationReport {
    pub config: serde_json::Value,
    pub converged: bool,
    pub per_bus: Vec<BusEstimate>,
    pub metrics: Option<Metrics>,
    pub stages: Vec<StageSummary>,
    pub messages: Vec<MessageStat>,
    pub totals: ReportBus,
    pub copy_disagreement: f64,
    pub outliers: Vec<Outlier>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}

fn summary(stage: u8, s: &StageOutcome, trace_path: Option<String>) -> StageSummary {
    StageSummary { stage, iterations: s.iterations, converged: s.converged, final_delta: s.final_delta(), trace_path }
}

impl EstimationReport {
    /// `trace_paths` are echoed for stage 1 and stage 2 in that order.
    pub fn from_run(
        case: &NetworkCase,
        run: &DrbseRun,
        config: serde_json::Value,
        trace_paths: [Option<String>; 2],
    ) -> Result<Self> {
        let [p1, p2] = trace_paths;
        let mut stages = vec![summary(1, &run.stage1, p1)];
        if let Some(s2) = &run.stage2 {
            stages.push(summary(2, s2, p2));
        }
        let per_bus = case
            .buses
            .iter()
            .enumerate()
            .map(|(i, b)| BusEstimate {
                id: b.id,
                v_est: run.state.as_ref().map(|(v, _)| v[i]),
                theta_est: run.state.as_ref().map(|(_, t)| t[i]),
                v_true: b.v_true,
                theta_true: b.theta_true,
            })
            .collect();
        let metrics = match &run.state {
            Some((v, t)) => Some(compute_metrics(case, v, t)?),
            None => None,
        };
        let mut grouped: BTreeMap<(Phase, usize, usize), MessageStat> = BTreeMap::new();
        for d in &run.deliveries {
            let e = grouped.entry((d.phase, d.from, d.to)).or_insert(MessageStat {
                phase: d.phase,
                from: d.from,
                to: d.to,
                count: 0,
                floats: 0,
                bytes: 0,
            });
            e.count += 1;
            e.floats += d.floats;
            e.bytes += d.bytes;
        }
        let messages: Vec<MessageStat> = grouped.into_values().collect();
        let totals = ReportBus {
            messages: messages.iter().map(|m| m.count).sum(),
            bytes: messages.iter().map(|m| m.bytes).sum(),
        };
        Ok(EstimationReport {
            config,
            converged: run.converged(),
            per_bus,
            metrics,
            stages,
            messages,
            totals,
            copy_disagreement: run.copy_disagreement,
            outliers: run.outliers.clone(),
            wall_time_ms: None,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
