//! Compiles generated C with the host compiler and compares it against the
//! reference interpreter. Skipped when no C compiler is available.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;

use tinyforge::codegen::{emit_c, CodegenOptions};
use tinyforge::dsp::{decode_fvf, encode_fvf};
use tinyforge::interp::{plan_arena, run_flat, run_flat_traced, Trace};
use tinyforge::ir::{DType, ModelGraph, TensorData};

use common::{inputs_for, max_rel_diff, quantized, random_graph};

const FLAGS: &[&str] = &[
    "-std=c99",
    "-Wall",
    "-Wextra",
    "-Werror",
    "-O1",
    "-ffp-contract=off",
    "-fno-strict-aliasing",
];

const MAIN: &str = r#"#include <stdio.h>
#include <stdint.h>
#include <string.h>
#include HEADER

static FILE *trace_out;

void model_trace(const char *tensor, int dtype, const void *data, size_t len)
{
    uint32_t n = (uint32_t)strlen(tensor), l = (uint32_t)len;
    unsigned char code = (unsigned char)dtype;
    size_t width = dtype == 0 ? 4 : 1;
    if (!trace_out) return;
    fwrite(&n, 4, 1, trace_out);
    fwrite(tensor, 1, n, trace_out);
    fwrite(&code, 1, 1, trace_out);
    fwrite(&l, 4, 1, trace_out);
    fwrite(data, width, len, trace_out);
}

int main(int argc, char **argv)
{
    FILE *in, *out;
    uint32_t count, len, i, out_len32;
    size_t out_len = 0;
    const float *y;
    if (argc != 4) return 2;
    in = fopen(argv[1], "rb");
    out = fopen(argv[2], "wb");
    if (!in || !out) return 2;
    if (fread(&count, 4, 1, in) != 1 || fread(&len, 4, 1, in) != 1) return 3;
    fwrite(&count, 4, 1, out);
    for (i = 0; i < count; ++i) {
        model_init();
        if (fread(model_input(), 4, len, in) != len) return 3;
        trace_out = i == 0 ? fopen(argv[3], "wb") : NULL;
        y = model_invoke(&out_len);
        if (trace_out) fclose(trace_out);
        trace_out = NULL;
        if (i == 0) {
            out_len32 = (uint32_t)out_len;
            fwrite(&out_len32, 4, 1, out);
        }
        fwrite(y, 4, out_len, out);
    }
    fclose(in);
    fclose(out);
    return 0;
}
"#;

fn compiler() -> Option<String> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    Command::new(&cc).arg("--version").output().ok()?.status.success().then_some(cc)
}

fn build(cc: &str, g: &ModelGraph, dir: &Path) -> PathBuf {
    let plan = plan_arena(g).unwrap();
    let opts = CodegenOptions {
        symbol_prefix: "model".into(),
        dtype: g.dtype(),
        emit_trace_hooks: true,
    };
    let code = emit_c(g, &plan, &opts).unwrap();
    std::fs::write(dir.join(&code.header_name), &code.header).unwrap();
    std::fs::write(dir.join(&code.source_name), &code.source).unwrap();
    std::fs::write(dir.join("main.c"), MAIN).unwrap();
    let exe = dir.join("model_test");
    let res = Command::new(cc)
        .args(FLAGS)
        .arg("-I")
        .arg(dir)
        .arg(format!("-DHEADER=\"{}\"", code.header_name))
        .arg(dir.join(&code.source_name))
        .arg(dir.join("main.c"))
        .arg("-o")
        .arg(&exe)
        .arg("-lm")
        .output()
        .unwrap();
    assert!(
        res.status.success(),
        "compile failed:\n{}",
        String::from_utf8_lossy(&res.stderr)
    );
    exe
}

fn run(exe: &Path, dir: &Path, inputs: &[Vec<f32>]) -> (Vec<Vec<f32>>, Trace) {
    let (fi, fo, ft) = (dir.join("in.fvf"), dir.join("out.fvf"), dir.join("trace.bin"));
    std::fs::write(&fi, encode_fvf(inputs).unwrap()).unwrap();
    let st = Command::new(exe).arg(&fi).arg(&fo).arg(&ft).status().unwrap();
    assert!(st.success(), "harness exited with {st}");
    let outs = decode_fvf(&std::fs::read(&fo).unwrap()).unwrap();
    let trace = Trace::decode(&std::fs::read(&ft).unwrap()).unwrap();
    (outs, trace)
}

fn check_graph(cc: &str, g: &ModelGraph, seed: u64) {
    let dir = tempfile::tempdir().unwrap();
    let exe = build(cc, g, dir.path());
    let inputs = inputs_for(g, 20, seed ^ 0x5eed);
    let (outs, trace) = run(&exe, dir.path(), &inputs);
    assert_eq!(outs.len(), inputs.len());
    let int8 = g.dtype() == DType::I8;
    for (x, got) in inputs.iter().zip(&outs) {
        let want = run_flat(g, x).unwrap();
        if int8 {
            assert_eq!(
                got.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                want.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                "seed {seed}"
            );
        } else {
            assert!(max_rel_diff(got, &want) <= 1e-5, "seed {seed}: {got:?} vs {want:?}");
        }
    }
    let (_, reference) = run_flat_traced(g, &inputs[0]).unwrap();
    let ids = |t: &Trace| t.entries.iter().map(|e| e.tensor_id.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&trace), ids(&reference), "seed {seed}");
    for (a, b) in trace.entries.iter().zip(&reference.entries) {
        match (&a.data, &b.data) {
            (TensorData::I8(x), TensorData::I8(y)) => assert_eq!(x, y, "{} seed {seed}", a.tensor_id),
            (TensorData::F32(x), TensorData::F32(y)) => {
                let tol = if int8 { 0.0 } else { 1e-5 };
                assert!(max_rel_diff(x, y) <= tol, "{} seed {seed}", a.tensor_id)
            }
            _ => panic!("{}: dtype mismatch", a.tensor_id),
        }
    }
}

#[test]
fn compiled_float_models_match_interpreter() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    for seed in 0..8 {
        check_graph(&cc, &random_graph(seed), seed);
    }
}

#[test]
fn compiled_int8_models_are_bit_exact() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    for seed in 100..108 {
        check_graph(&cc, &quantized(&random_graph(seed), seed), seed);
    }
}
