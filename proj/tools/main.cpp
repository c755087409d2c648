// SPDX-License-Identifier: Apache-2.0

#include "tomeforge/cli.hpp"

int main(int argc, char** argv) { return tomeforge::cli_main(argc, argv); }
