#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use rexer_bookshop::{serve, BookshopConfig, ServerHandle};
use rexer_cli::RunReport;

pub const SPEC: &str = rexer_bookshop::FIXTURE_SPEC_PATH;

pub fn rexer(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rexer"))
        .args(args)
        .current_dir(dir)
        .env_remove(rexer_cli::AUTH_TOKEN_ENV)
        .output()
        .expect("rexer runs")
}

pub fn code(output: &Output) -> i32 {
    output.status.code().expect("exited normally")
}

pub fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

pub fn shop(config: BookshopConfig) -> ServerHandle {
    serve(0, config).expect("bookshop starts")
}

pub fn read_report(path: &Path) -> RunReport {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}
