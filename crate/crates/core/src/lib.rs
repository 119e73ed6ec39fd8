// SPDX-License-Identifier: Apache-2.0

pub mod cli;
pub mod clock;
pub mod consumer;
pub mod dac;
pub mod lifecycle;
pub mod manifest;
pub mod object_store;
pub mod overhead;
pub mod producer;
pub mod sim;
pub mod tgb_format;
