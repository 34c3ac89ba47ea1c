use std::ffi::CString;

use pyo3::prelude::*;
use pyo3::types::PyModule;

fn with_module(script: &str) {
    Python::initialize();
    Python::attach(|py| {
        let m = PyModule::new(py, "silence_denoise").unwrap();
        silence_denoise_py::register(&m).unwrap();
        let globals = pyo3::types::PyDict::new(py);
        globals.set_item("sd", m).unwrap();
        let code = CString::new(script).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.print(py);
            panic!("script failed");
        }
    });
}

#[test]
fn signal_functions_round_trip() {
    with_module(
        r#"
clips = sd.toy_mixtures(2, seconds=2.0, seed=3)
x = clips[0]["mixture"]
spec = sd.stft(x)
assert spec.shape == (256, len(spec.real())), spec.shape
y = sd.istft(spec, len(x))
assert len(y) == len(x)
mid = slice(300, len(x) - 600)
err = sum((a - b) ** 2 for a, b in zip(x[mid], y[mid])) ** 0.5
assert err < 1e-8 * max(1.0, sum(a * a for a in x[mid]) ** 0.5), err
assert sd.label_silence(clips[0]["clean"]) == clips[0]["labels"]
assert sd.ssnr(x, x) == 35.0
assert abs(sd.stoi(clips[0]["clean"], clips[0]["clean"]) - 1.0) < 1e-3
m = sd.sid_metrics([1, 0, 1, 1], [1, 0, 0, 1])
assert (m["tp"], m["tn"], m["fp"], m["fn"]) == (2, 1, 1, 0)
assert sd.roc_auc([0.1, 0.9], [False, True]) == 1.0
assert len(sd.spectral_gate(x, clips[0]["labels"])) == len(x)
"#,
    );
}

#[test]
fn model_denoises_and_trains() {
    with_module(
        r#"
clips = sd.toy_mixtures(2, seconds=1.0, seed=4)
model = sd.Model("desk", seed=1)
assert model.n_params > 0
out = model.denoise(clips[0]["mixture"])
assert len(out["denoised"]) == len(clips[0]["mixture"])
assert len(out["confidences"]) == 30
gt = model.denoise(clips[0]["mixture"], silent_labels=clips[0]["labels"])
assert gt["confidences"] is None
losses = model.train("sid", [c["clean"] for c in clips], [c["noise"] for c in clips], epochs=2, batch_size=2)
assert len(losses) == 2
try:
    model.train("warmup", [], [])
    raise AssertionError("accepted an unknown phase")
except ValueError:
    pass
"#,
    );
}
