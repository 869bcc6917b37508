#include "cli.hpp"

int main(int argc, char** argv) {
  return saml::cli::run(std::vector<std::string>(argv, argv + argc));
}
