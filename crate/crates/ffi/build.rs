fn main() {
    // Regenerate the C header whenever the surface changes.
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").expect("manifest dir");
    match cbindgen::generate(&crate_dir) {
        Ok(bindings) => {
            bindings.write_to_file(format!("{crate_dir}/include/ddmikit.h"));
        }
        Err(e) => println!("cargo:warning=cbindgen skipped: {e}"),
    }
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
}
