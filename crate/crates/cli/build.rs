use std::process::Command;

fn main() {
    let describe = Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty());
    let id = match describe {
        Some(d) => format!("v{}-{d}", env!("CARGO_PKG_VERSION")),
        None => format!("v{}-unknown", env!("CARGO_PKG_VERSION")),
    };
    println!("cargo:rustc-env=TREEATTN_BUILD_ID={id}");
    println!("cargo:rerun-if-changed=build.rs");
}
