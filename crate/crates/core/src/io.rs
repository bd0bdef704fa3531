//! Workflow JSON and pool JSON Lines files.
//!
//! Node ids must be dense (`0..n`), models are referenced by string id, and
//! an empirical workflow names its pool file relative to its own location.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::WorkflowGraph;
use crate::instance::{Mode, WorkflowInstance};
use crate::model::{ModelCatalog, ModelSpec, PoolRecord, PoolTable, Profile, ProfileTable};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeEntry {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub node: usize,
    pub model: String,
    pub p: f64,
    pub mean_tokens: f64,
}

/// On-disk workflow description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowFile {
    pub nodes: Vec<NodeEntry>,
    pub edges: Vec<(usize, usize)>,
    pub models: Vec<ModelSpec>,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profiles: Option<Vec<ProfileEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pools: Option<String>,
}

/// One line of a pool file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolLine {
    pub node: usize,
    pub model: String,
    pub success: bool,
    pub tokens: u32,
    pub latency_s: f64,
}

fn parse_err(what: impl std::fmt::Display) -> Error {
    Error::Parse(what.to_string())
}

fn model_index(catalog: &ModelCatalog, id: &str) -> Result<usize> {
    catalog
        .index_of(id)
        .ok_or_else(|| parse_err(format!("unknown model id {id:?}")))
}

fn graph_of(file: &WorkflowFile) -> Result<WorkflowGraph> {
    let n = file.nodes.len();
    let mut names = vec![None; n];
    let mut seen = vec![false; n];
    for node in &file.nodes {
        if node.id >= n || seen[node.id] {
            return Err(parse_err(format!(
                "node ids must be dense 0..{n} without repeats; got {}",
                node.id
            )));
        }
        seen[node.id] = true;
        names[node.id] = node.name.clone();
    }
    Ok(WorkflowGraph::with_names(names, file.edges.clone()))
}

fn catalog_of(file: &WorkflowFile) -> Result<ModelCatalog> {
    let mut ids = HashSet::new();
    for m in &file.models {
        if !ids.insert(m.id.as_str()) {
            return Err(parse_err(format!("duplicate model id {:?}", m.id)));
        }
    }
    Ok(ModelCatalog::new(file.models.clone()))
}

/// Builds an instance from a parsed file; `base_dir` resolves the pool path.
/// Budget and deadline are zero.
pub fn instance_from_file(file: &WorkflowFile, base_dir: &Path) -> Result<WorkflowInstance> {
    let graph = graph_of(file)?;
    let catalog = catalog_of(file)?;
    let n = graph.len();
    match file.mode {
        Mode::Parametric => {
            let entries = file
                .profiles
                .as_ref()
                .ok_or_else(|| parse_err("parametric workflow without \"profiles\""))?;
            let mut table = ProfileTable::new(n, catalog.len());
            for e in entries {
                let m = model_index(&catalog, &e.model)?;
                if e.node >= n {
                    return Err(parse_err(format!("profile for unknown node {}", e.node)));
                }
                if table.get(e.node, m).is_some() {
                    return Err(parse_err(format!(
                        "duplicate profile for node {}, model {}",
                        e.node, e.model
                    )));
                }
                table.set(e.node, m, Profile::from_tokens(e.p, e.mean_tokens, catalog.get(m)));
            }
            Ok(WorkflowInstance::parametric(graph, catalog, table))
        }
        Mode::Empirical => {
            let rel = file
                .pools
                .as_ref()
                .ok_or_else(|| parse_err("empirical workflow without \"pools\""))?;
            let pools = read_pools(&base_dir.join(rel), n, &catalog)?;
            WorkflowInstance::empirical(graph, catalog, pools)
        }
    }
}

pub fn load_workflow(path: &Path) -> Result<WorkflowInstance> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: WorkflowFile = serde_json::from_str(&text).map_err(|e| parse_err(format!("{}: {e}", path.display())))?;
    instance_from_file(&file, path.parent().unwrap_or(Path::new(".")))
}

/// Parses pool lines; blank lines are skipped.
pub fn parse_pools(reader: impl BufRead, n_nodes: usize, catalog: &ModelCatalog) -> Result<PoolTable> {
    let mut records: Vec<Vec<PoolRecord>> = vec![Vec::new(); n_nodes * catalog.len()];
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| parse_err(format!("line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PoolLine = serde_json::from_str(&line).map_err(|e| parse_err(format!("line {}: {e}", i + 1)))?;
        let m = model_index(catalog, &rec.model).map_err(|e| parse_err(format!("line {}: {e}", i + 1)))?;
        if rec.node >= n_nodes {
            return Err(parse_err(format!("line {}: unknown node {}", i + 1, rec.node)));
        }
        records[rec.node * catalog.len() + m].push(PoolRecord {
            success: rec.success,
            tokens: rec.tokens,
            latency_s: rec.latency_s,
        });
    }
    let mut table = PoolTable::new(n_nodes, catalog.len());
    for (i, r) in records.into_iter().enumerate() {
        table.set(i / catalog.len(), i % catalog.len(), crate::model::RolloutPool::new(r));
    }
    Ok(table)
}

pub fn read_pools(path: &Path, n_nodes: usize, catalog: &ModelCatalog) -> Result<PoolTable> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_pools(BufReader::new(f), n_nodes, catalog).map_err(|e| match e {
        Error::Parse(msg) => parse_err(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Pools in `(node, model, record)` order, one JSON object per line.
pub fn write_pools_to(mut w: impl Write, pools: &PoolTable, catalog: &ModelCatalog) -> std::io::Result<()> {
    for (node, m, pool) in pools.iter() {
        for r in pool.records() {
            let line = PoolLine {
                node,
                model: catalog.get(m).id.clone(),
                success: r.success,
                tokens: r.tokens,
                latency_s: r.latency_s,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()
}

pub fn write_pools(path: &Path, pools: &PoolTable, catalog: &ModelCatalog) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_pools_to(BufWriter::new(f), pools, catalog).map_err(|e| Error::io(path, e))
}

/// File representation of `instance`; empirical instances reference
/// `pools_ref` instead of embedding their records.
pub fn workflow_file(instance: &WorkflowInstance, pools_ref: Option<&str>) -> WorkflowFile {
    let nodes = (0..instance.n_nodes())
        .map(|id| NodeEntry {
            id,
            name: instance.graph.name(id).map(str::to_owned),
        })
        .collect();
    let (profiles, pools) = match instance.mode() {
        Mode::Parametric => (
            Some(
                instance
                    .profiles()
                    .iter()
                    .filter_map(|(node, m, p)| {
                        p.map(|p| ProfileEntry {
                            node,
                            model: instance.catalog.get(m).id.clone(),
                            p: p.p,
                            mean_tokens: p.mean_tokens,
                        })
                    })
                    .collect(),
            ),
            None,
        ),
        Mode::Empirical => (None, Some(pools_ref.unwrap_or("pools.jsonl").to_owned())),
    };
    WorkflowFile {
        nodes,
        edges: instance.graph.edges().to_vec(),
        models: instance.catalog.models().to_vec(),
        mode: instance.mode(),
        profiles,
        pools,
    }
}

/// Sibling pool file name for a workflow at `path`: `w.json` → `w.pools.jsonl`.
pub fn pools_path_for(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("workflow");
    path.with_file_name(format!("{stem}.pools.jsonl"))
}

/// Writes the workflow, plus its pools next to it in empirical mode.
pub fn write_workflow(path: &Path, instance: &WorkflowInstance) -> Result<()> {
    let pools_ref = instance.pools().map(|pools| {
        let pp = pools_path_for(path);
        (
            pp.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_owned(),
            pp,
            pools,
        )
    });
    if let Some((_, pp, pools)) = &pools_ref {
        write_pools(pp, pools, &instance.catalog)?;
    }
    let file = workflow_file(instance, pools_ref.as_ref().map(|(name, _, _)| name.as_str()));
    let mut text = serde_json::to_string_pretty(&file).map_err(parse_err)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const PARAMETRIC: &str = r#"{
        "nodes": [{"id": 1}, {"id": 0, "name": "lemma"}],
        "edges": [[0, 1]],
        "models": [{"id": "m0", "price_per_1k_tokens_usd": 0.002, "tokens_per_second": 50.0}],
        "mode": "parametric",
        "profiles": [
            {"node": 0, "model": "m0", "p": 0.42, "mean_tokens": 850},
            {"node": 1, "model": "m0", "p": 0.9, "mean_tokens": 100}
        ]
    }"#;

    fn parse(text: &str) -> Result<WorkflowInstance> {
        let file: WorkflowFile = serde_json::from_str(text).map_err(parse_err)?;
        instance_from_file(&file, Path::new("."))
    }

    #[test]
    fn parametric_file() {
        let inst = parse(PARAMETRIC).unwrap();
        assert_eq!(inst.graph.name(0), Some("lemma"));
        let p = inst.profile(0, 0).unwrap();
        assert_eq!((p.p, p.cost, p.latency), (0.42, 1_700, 17_000));
    }

    #[test]
    fn parse_errors() {
        let unknown_model = PARAMETRIC.replace("\"node\": 1, \"model\": \"m0\"", "\"node\": 1, \"model\": \"zz\"");
        assert!(matches!(parse(&unknown_model), Err(Error::Parse(_))));
        let sparse = PARAMETRIC.replace("{\"id\": 1}", "{\"id\": 5}");
        assert!(matches!(parse(&sparse), Err(Error::Parse(_))));
        assert!(matches!(parse("{not json"), Err(Error::Parse(_))));
    }

    #[test]
    fn pool_lines() {
        let catalog = ModelCatalog::new(vec![ModelSpec::new("m0", 0.002, 50.0)]);
        let text = "{\"node\":0,\"model\":\"m0\",\"success\":true,\"tokens\":812,\"latency_s\":16.4}\n\n\
                    {\"node\":0,\"model\":\"m0\",\"success\":false,\"tokens\":10,\"latency_s\":0.2}\n";
        let t = parse_pools(text.as_bytes(), 1, &catalog).unwrap();
        assert_eq!(t.get(0, 0).len(), 2);
        assert_eq!(t.get(0, 0).successes(), 1);
        let mut out = Vec::new();
        write_pools_to(&mut out, &t, &catalog).unwrap();
        assert_eq!(parse_pools(out.as_slice(), 1, &catalog).unwrap(), t);
        assert!(parse_pools(
            "{\"node\":3,\"model\":\"m0\",\"success\":true,\"tokens\":1,\"latency_s\":1}".as_bytes(),
            1,
            &catalog
        )
        .is_err());
    }

    #[test]
    fn pools_path() {
        assert_eq!(
            pools_path_for(Path::new("/x/w.json")),
            PathBuf::from("/x/w.pools.jsonl")
        );
    }
}
