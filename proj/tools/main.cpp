#include "servoguard/cli.hpp"

int main(int argc, char** argv) { return servoguard::cli::run(argc, argv); }
