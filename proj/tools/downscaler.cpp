#include <downscaler/cli.hpp>

int main(int argc, char** argv) { return downscaler::run_cli(argc, argv); }
