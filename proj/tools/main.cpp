// SPDX-License-Identifier: Apache-2.0

#include "depthvar/commands.hpp"

int main(int argc, char** argv) { return depthvar::run_cli(argc, argv); }
