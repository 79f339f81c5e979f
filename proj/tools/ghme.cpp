#include "commands.hpp"

int main(int argc, char** argv) { return ghme::cli::run(argc, argv); }
