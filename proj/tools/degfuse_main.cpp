// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "degfuse/cli.hpp"

int main(int argc, char** argv) { return degfuse::run_cli(argc, argv, std::cout, std::cerr); }
