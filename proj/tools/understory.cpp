// Copyright 2026 The Understory Authors
// SPDX-License-Identifier: Apache-2.0
#include "understory/cli.hpp"

int main(int argc, char** argv) { return understory::cli::run_cli(argc, argv); }
