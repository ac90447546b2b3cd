use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;

use super::BackgroundState;

#[derive(Serialize)]
struct Manifest<'a> {
    residual: f64,
    iterations: usize,
    residual_history: &'a [f64],
    d_const: f64,
    v: f64,
    v0: f64,
    m_param: f64,
    files: Vec<String>,
}

/// Writes one CSV per field, a JSON manifest and a reloadable `state.json`.
pub fn write_bundle(state: &BackgroundState, dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let x = state.grid.x();
    let mut files = Vec::new();
    let sector_fields: [(&str, &[f64]); 14] = [
        ("psi2_x", &state.psi2_x),
        ("k_x", &state.k_x),
        ("khat_x", &state.khat_x),
        ("n_x", &state.n_x),
        ("nhat_x", &state.nhat_x),
        ("khat_second_moment", &state.khat_second_moment),
        ("f_x", &state.f_x),
        ("g_x", &state.g_x),
        ("big_f_x", &state.big_f_x),
        ("f_prime_x", &state.f_prime_x),
        ("grad_g_x", &state.grad_g_x),
        ("p_x", &state.p_x),
        ("a_x", &state.a_x),
        ("c_norm", &state.c_norm),
    ];
    for (name, values) in sector_fields {
        let file = format!("{name}.csv");
        let mut w = csv::Writer::from_path(dir.join(&file))?;
        w.write_record(["x", "value"])?;
        for (xi, v) in x.iter().zip(values) {
            w.write_record([xi.to_string(), v.to_string()])?;
        }
        w.flush()?;
        files.push(file);
    }
    type Surface<'a> = (&'a str, &'a str, &'a [f64], &'a [Vec<f64>]);
    let surfaces: [Surface; 2] = [
        ("psi2_kx", "k", state.grid.k(), &state.psi2_kx),
        ("psihat2", "khat", state.grid.khat(), &state.psihat2),
    ];
    for (name, axis, nodes, values) in surfaces {
        let file = format!("{name}.csv");
        let mut w = csv::Writer::from_path(dir.join(&file))?;
        w.write_record(["x", axis, "value"])?;
        for (xi, row) in x.iter().zip(values) {
            for (ki, v) in nodes.iter().zip(row) {
                w.write_record([xi.to_string(), ki.to_string(), v.to_string()])?;
            }
        }
        w.flush()?;
        files.push(file);
    }
    files.push("state.json".into());
    let manifest = Manifest {
        residual: state.residual,
        iterations: state.iterations,
        residual_history: &state.residual_history,
        d_const: state.d_const,
        v: state.v,
        v0: state.v0,
        m_param: state.m_param,
        files,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    fs::write(dir.join("state.json"), serde_json::to_string(state)?)?;
    Ok(())
}

/// Reloads a state written by [`write_bundle`].
pub fn read_state(dir: &Path) -> anyhow::Result<BackgroundState> {
    let path = dir.join("state.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
