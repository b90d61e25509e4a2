// Copyright 2026 The diasys Authors
// SPDX-License-Identifier: Apache-2.0

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("DIASYS_LOG")).init();
    std::process::exit(diasys::cli::main_with_args(std::env::args_os()));
}
