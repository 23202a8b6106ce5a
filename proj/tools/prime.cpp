// SPDX-License-Identifier: Apache-2.0
#include "prime/cli.hpp"

int main(int argc, char** argv) { return prime::cli::run(argc, argv); }
