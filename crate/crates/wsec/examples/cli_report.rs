//! Runs the command-line front end in process and writes a report with a
//! trajectory sidecar to the temporary directory.

fn main() {
    let out = std::env::temp_dir().join("wsec-example-report.json");
    let code = wsec::cli::run([
        "wsec", "compare", "rauch1", "--space", "sphere", "--model-kappa", "0", "--length", "3",
        "--out", out.to_str().unwrap(),
    ]);
    println!("exit code {code}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    println!("schema {} command {}", report["schema_version"], report["command"]);
    println!("files {}", report["results"]["files"]);
}
