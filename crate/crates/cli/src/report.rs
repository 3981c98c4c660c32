//! Consolidated report: JSON plus plot-ready CSVs per block.

use std::fmt::Write as _;

use serde_json::{json, Value};
use vqa_align::rsa::BlockScope;

use crate::error::PipelineError;
use crate::stages::{pca_file, scope_file, Pipeline, DISTANCE_SUMMARY, PCA_SUMMARY, RSA_SUMMARY};

fn read_json(p: &Pipeline, rel: &str) -> Result<Value, PipelineError> {
    Ok(serde_json::from_str(&p.store.read_string(rel)?)?)
}

/// Histogram CSV with one count column per system kind present.
fn histogram_csv(summary: &Value, block_number: u8) -> String {
    let kinds: Vec<(&str, &Value)> = ["human", "vlm"]
        .into_iter()
        .filter_map(|k| {
            summary
                .get(format!("{k}/block{block_number}"))
                .map(|s| (k, s))
        })
        .collect();
    let mut out = String::from("bin_lo,bin_hi");
    for (k, _) in &kinds {
        let _ = write!(out, ",{k}");
    }
    out.push('\n');
    let Some((_, first)) = kinds.first() else {
        return out;
    };
    let edges: Vec<f64> = serde_json::from_value(first["edges"].clone()).unwrap_or_default();
    for (i, w) in edges.windows(2).enumerate() {
        let _ = write!(out, "{},{}", w[0], w[1]);
        for (_, s) in &kinds {
            let _ = write!(out, ",{}", s["histogram"][i].as_u64().unwrap_or(0));
        }
        out.push('\n');
    }
    out
}

pub fn build_report(p: &Pipeline) -> Result<Vec<(String, Vec<u8>)>, PipelineError> {
    let rsa = read_json(p, RSA_SUMMARY)?;
    let dist = read_json(p, DISTANCE_SUMMARY)?;
    let pca = read_json(p, PCA_SUMMARY)?;
    let curation: Value =
        serde_json::from_str(&p.store.read_string(crate::stages::CURATION_STATS)?)?;

    let mut files = Vec::new();
    let mut blocks = Vec::new();
    for block in p.config.blocks() {
        let scope = BlockScope::from(block);
        let name = block.as_str();
        let heatmap = format!("report/heatmap_{name}.csv");
        let hist = format!("report/distance_hist_{name}.csv");
        let scatter = format!("report/pca_{name}.csv");
        files.push((heatmap.clone(), p.store.read(&scope_file(scope, "csv"))?));
        files.push((
            hist.clone(),
            histogram_csv(&dist["by_kind_and_block"], block.number()).into_bytes(),
        ));
        files.push((scatter.clone(), p.store.read(&pca_file(block))?));
        let by_kind: serde_json::Map<String, Value> = ["human", "vlm"]
            .into_iter()
            .filter_map(|k| {
                dist["by_kind_and_block"]
                    .get(format!("{k}/block{}", block.number()))
                    .map(|s| (k.to_string(), s.clone()))
            })
            .collect();
        blocks.push(json!({
            "block": name,
            "number": block.number(),
            "group_means": rsa["scopes"][scope.as_str()]["group_means"],
            "shared_cells": rsa["scopes"][scope.as_str()]["shared_cells"],
            "heatmap_csv": heatmap,
            "distance_summary": by_kind,
            "distance_histogram_csv": hist,
            "pca": {
                "scatter_csv": scatter,
                "explained_variance_ratio": pca[name]["explained_variance_ratio"],
                "explained_sum": pca[name]["explained_sum"],
                "rank_deficient": pca[name]["rank_deficient"],
            },
        }));
    }
    let report = json!({
        "config_hash": p.config.hash(),
        "embedding_model": p.config.embedding.model_id,
        "pooling_mode": p.config.pooling_mode,
        "systems": rsa["systems"],
        "curation_vlm_totals": curation["vlm_totals"],
        "all_blocks_group_means": rsa["scopes"]["all"]["group_means"],
        "blocks": blocks,
    });
    files.push((
        crate::stages::REPORT.to_string(),
        (serde_json::to_string_pretty(&report)? + "\n").into_bytes(),
    ));
    Ok(files)
}
