// Writes CSV fixtures for the command-line tests into the directory given as argv[1].

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "monodyn/sim.hpp"

namespace {

void write_simulated(const std::string& path, double sigma, int n, std::uint64_t index) {
  monodyn::SimSpec spec;
  spec.sigma = sigma;
  spec.n_min = spec.n_max = n;
  const auto d = monodyn::generate_dataset(spec, index);
  std::ofstream f(path);
  f.precision(17);
  f << "subject,t,y\n";
  for (std::size_t j = 0; j < d.size(); ++j) f << "sim," << d.times[j] << ',' << d.values[j] << '\n';
}

// Synthetic cohort: Preece-Baines growth curves with subject-level parameter
// variation, 31 ages from 1 to 18 years, 0.3 cm measurement noise.
void write_cohort(const std::string& path) {
  std::vector<double> ages{1, 1.25, 1.5, 1.75, 2, 3, 4, 5, 6, 7, 8};
  for (double a = 8.5; a <= 18.0; a += 0.5) ages.push_back(a);
  boost::random::mt19937_64 eng(2024);
  boost::random::normal_distribution<double> z(0.0, 1.0);
  std::ofstream f(path);
  f.precision(10);
  f << "subject,t,y\n";
  for (int s = 1; s <= 54; ++s) {
    const double h1 = 163.0 + 5.0 * z(eng);
    const double ht = h1 - (12.0 + 1.5 * z(eng));
    const double s0 = 0.12 + 0.015 * z(eng);
    const double s1 = 1.1 + 0.12 * z(eng);
    const double th = 11.6 + 0.7 * z(eng);
    for (double a : ages) {
      const double h = h1 - 2.0 * (h1 - ht) / (std::exp(s0 * (a - th)) + std::exp(s1 * (a - th)));
      f << "girl" << s << ',' << a << ',' << h + 0.3 * z(eng) << '\n';
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_fixtures DIR\n";
    return 2;
  }
  const std::string dir = argv[1];
  std::filesystem::create_directories(dir);
  write_simulated(dir + "/noiseless.csv", 0.0, 400, 0);
  write_simulated(dir + "/noisy.csv", 0.01, 100, 1);
  write_cohort(dir + "/cohort.csv");
  std::ofstream(dir + "/empty.csv");
  std::ofstream(dir + "/malformed.csv") << "subject,t,y\na,0.1,1.0\na,0.2,oops\n";
  return 0;
}
