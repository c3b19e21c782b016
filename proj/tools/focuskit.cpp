#include "focuskit_cli.hpp"

int main(int argc, char** argv) { return focuskit::cli::dispatch(argc, argv); }
