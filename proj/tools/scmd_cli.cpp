// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "scmd/commands.hpp"

int main(int argc, char** argv) { return scmd::run_cli(argc, argv, std::cout, std::cerr); }
