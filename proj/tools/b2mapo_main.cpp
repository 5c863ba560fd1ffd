#include "b2mapo/harness.hpp"

int main(int argc, char** argv) { return b2mapo::harness_main(argc, argv); }
