// Copyright 2026 The diasys Authors
// SPDX-License-Identifier: Apache-2.0

pub mod apps;
pub mod cli;
pub mod dataflow;
pub mod event_gen;
pub mod event_model;
pub mod metering;
pub mod platform;
pub mod workloads;
