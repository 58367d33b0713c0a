#include "mto/optimizer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <thread>

namespace mto {

namespace {

constexpr double kAsyInit = 0.5;
constexpr double kAsyShrink = 0.7;
constexpr double kAsyGrow = 1.2;
constexpr double kAlbefa = 0.1;   // keep subproblem bounds off the asymptotes
constexpr double kRaa0 = 1e-5;    // strict-convexity floor on the approximation
constexpr double kSlackC = 1e7;   // linear price of the constraint-violation slack
constexpr double kFeasTol = 1e-3;
constexpr int kConvergeStreak = 5;

/// Separable convex approximation around the current iterate.
struct Subproblem {
  Eigen::VectorXd low, upp, alfa, beta;
  Eigen::VectorXd p0, q0;
  Eigen::MatrixXd P, Q;  // one row per constraint
  Eigen::VectorXd b;
};

/// Minimizer of the separable Lagrangian at multipliers lam, clamped to the
/// subproblem bounds.
Eigen::VectorXd primal_minimizer(const Subproblem& sp, const Eigen::VectorXd& lam) {
  Eigen::VectorXd pl = sp.p0;
  Eigen::VectorXd ql = sp.q0;
  if (lam.size() > 0) {
    pl += sp.P.transpose() * lam;
    ql += sp.Q.transpose() * lam;
  }
  const Eigen::ArrayXd sp_ = pl.array().max(0.0).sqrt();
  const Eigen::ArrayXd sq_ = ql.array().max(0.0).sqrt();
  Eigen::VectorXd x =
      ((sp_ * sp.low.array() + sq_ * sp.upp.array()) / (sp_ + sq_)).matrix();
  return x.cwiseMax(sp.alfa).cwiseMin(sp.beta);
}

double dual_value(const Subproblem& sp, const Eigen::VectorXd& lam,
                  const Eigen::VectorXd& x) {
  const Eigen::ArrayXd ux = (sp.upp - x).array();
  const Eigen::ArrayXd xl = (x - sp.low).array();
  Eigen::VectorXd pl = sp.p0;
  Eigen::VectorXd ql = sp.q0;
  double w = 0;
  if (lam.size() > 0) {
    pl += sp.P.transpose() * lam;
    ql += sp.Q.transpose() * lam;
    w -= lam.dot(sp.b);
    for (int i = 0; i < lam.size(); ++i) {
      const double y = std::max(0.0, lam[i] - kSlackC);
      w -= 0.5 * y * y;
    }
  }
  w += (pl.array() / ux + ql.array() / xl).sum();
  return w;
}

Eigen::VectorXd dual_gradient(const Subproblem& sp, const Eigen::VectorXd& lam,
                              const Eigen::VectorXd& x) {
  const Eigen::ArrayXd uxi = (sp.upp - x).array().inverse();
  const Eigen::ArrayXd xli = (x - sp.low).array().inverse();
  Eigen::VectorXd g = sp.P * uxi.matrix() + sp.Q * xli.matrix() - sp.b;
  for (int i = 0; i < lam.size(); ++i) g[i] -= std::max(0.0, lam[i] - kSlackC);
  return g;
}

/// Hessian of the (concave) dual; entries only from variables strictly inside
/// the subproblem bounds, where x(lam) is differentiable.
Eigen::MatrixXd dual_hessian(const Subproblem& sp, const Eigen::VectorXd& lam,
                             const Eigen::VectorXd& x) {
  const int m = static_cast<int>(lam.size());
  const int n = static_cast<int>(x.size());
  Eigen::VectorXd pl = sp.p0 + sp.P.transpose() * lam;
  Eigen::VectorXd ql = sp.q0 + sp.Q.transpose() * lam;
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m, m);
  for (int j = 0; j < n; ++j) {
    if (x[j] <= sp.alfa[j] || x[j] >= sp.beta[j]) continue;
    const double spj = std::sqrt(std::max(pl[j], 0.0));
    const double sqj = std::sqrt(std::max(ql[j], 0.0));
    const double den = spj + sqj;
    const double span = sp.upp[j] - sp.low[j];
    // dx/dp and dx/dq via x = (sqrt(p) low + sqrt(q) upp) / (sqrt(p)+sqrt(q))
    const double dxdp = -span * sqj / (2.0 * std::max(spj, 1e-300) * den * den);
    const double dxdq = span * spj / (2.0 * std::max(sqj, 1e-300) * den * den);
    const double ux2 = (sp.upp[j] - x[j]) * (sp.upp[j] - x[j]);
    const double xl2 = (x[j] - sp.low[j]) * (x[j] - sp.low[j]);
    for (int i = 0; i < m; ++i) {
      const double dgdx = sp.P(i, j) / ux2 - sp.Q(i, j) / xl2;
      for (int k = 0; k < m; ++k) {
        const double dxdl = dxdp * sp.P(k, j) + dxdq * sp.Q(k, j);
        H(i, k) += dgdx * dxdl;
      }
    }
  }
  for (int i = 0; i < m; ++i)
    if (lam[i] > kSlackC) H(i, i) -= 1.0;
  return H;
}

double kkt_violation(const Eigen::VectorXd& lam, const Eigen::VectorXd& g,
                     const Eigen::VectorXd& b) {
  double v = 0;
  for (int i = 0; i < lam.size(); ++i) {
    const double scale = 1.0 + std::abs(b[i]);
    const double r = lam[i] <= 0.0 ? std::max(g[i], 0.0) : std::abs(g[i]);
    v = std::max(v, r / scale);
  }
  return v;
}

/// Maximizes the concave dual over lam >= 0 by damped projected Newton with
/// a per-coordinate bisection fallback (the gradient is monotone in each
/// multiplier).
Eigen::VectorXd solve_dual(const Subproblem& sp, Eigen::VectorXd lam, double tol) {
  const int m = static_cast<int>(sp.b.size());
  if (m == 0) return lam;
  lam = lam.cwiseMax(0.0);
  Eigen::VectorXd x = primal_minimizer(sp, lam);
  Eigen::VectorXd g = dual_gradient(sp, lam, x);
  double w = dual_value(sp, lam, x);
  for (int it = 0; it < 120 && kkt_violation(lam, g, sp.b) > tol; ++it) {
    Eigen::MatrixXd H = dual_hessian(sp, lam, x);
    double ridge = 1e-12 * std::max(1.0, H.cwiseAbs().maxCoeff());
    Eigen::VectorXd step(m);
    for (int tries = 0;; ++tries) {
      Eigen::MatrixXd A = -H + ridge * Eigen::MatrixXd::Identity(m, m);
      step = A.ldlt().solve(g);
      if (step.allFinite()) break;
      ridge *= 100.0;
      if (tries > 10) {
        step = g;  // gradient ascent as a last resort
        break;
      }
    }
    // Inactive multipliers pinned at zero stay there.
    for (int i = 0; i < m; ++i)
      if (lam[i] <= 0.0 && g[i] < 0.0) step[i] = 0.0;
    double t = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      Eigen::VectorXd cand = (lam + t * step).cwiseMax(0.0);
      // Keep growth bounded so the Newton step cannot overshoot into the
      // flat region where every variable is clamped.
      for (int i = 0; i < m; ++i) cand[i] = std::min(cand[i], 10.0 * (lam[i] + 1.0));
      if ((cand - lam).lpNorm<Eigen::Infinity>() == 0.0) break;
      const Eigen::VectorXd xc = primal_minimizer(sp, cand);
      const double wc = dual_value(sp, cand, xc);
      if (wc >= w - 1e-14 * std::abs(w)) {
        lam = cand;
        x = xc;
        w = wc;
        moved = true;
        break;
      }
    }
    if (!moved) break;
    g = dual_gradient(sp, lam, x);
  }
  if (kkt_violation(lam, g, sp.b) > tol) {
    // Coordinate-wise bisection: each dW/dlam_i is nonincreasing in lam_i.
    for (int cycle = 0; cycle < 8; ++cycle) {
      for (int i = 0; i < m; ++i) {
        auto gi = [&](double li) {
          Eigen::VectorXd l2 = lam;
          l2[i] = li;
          return dual_gradient(sp, l2, primal_minimizer(sp, l2))[i];
        };
        double lo = 0.0;
        if (gi(0.0) <= 0.0) {
          lam[i] = 0.0;
          continue;
        }
        double hi = std::max(1.0, 2.0 * lam[i]);
        while (gi(hi) > 0.0 && hi < 1e30) hi *= 10.0;
        for (int bs = 0; bs < 70; ++bs) {
          const double mid = 0.5 * (lo + hi);
          (gi(mid) > 0.0 ? lo : hi) = mid;
        }
        lam[i] = 0.5 * (lo + hi);
      }
      x = primal_minimizer(sp, lam);
      g = dual_gradient(sp, lam, x);
      if (kkt_violation(lam, g, sp.b) <= tol) break;
    }
  }
  return lam;
}

int thread_budget() {
  if (const char* env = std::getenv("MTO_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

const char* status_name(RunStatus s) {
  switch (s) {
    case RunStatus::Converged: return "converged";
    case RunStatus::MaxIterations: return "max_iterations";
    case RunStatus::SolverFailure: return "solver_failure";
  }
  return "unknown";
}

}  // namespace

MmaState MmaState::create(int n, const Eigen::VectorXd& move) {
  if (move.size() != n) throw std::invalid_argument("move limit size mismatch");
  MmaState st;
  st.low = Eigen::VectorXd::Zero(n);
  st.upp = Eigen::VectorXd::Zero(n);
  st.xold1 = Eigen::VectorXd::Zero(n);
  st.xold2 = Eigen::VectorXd::Zero(n);
  st.move = move;
  return st;
}

Eigen::VectorXd mma_step(const Eigen::VectorXd& x, double F, const Eigen::VectorXd& dF,
                         const Eigen::VectorXd& gval, const Eigen::MatrixXd& dg,
                         const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                         MmaState& st) {
  const int n = static_cast<int>(x.size());
  const int m = static_cast<int>(gval.size());
  if (dF.size() != n || lo.size() != n || hi.size() != n || st.move.size() != n ||
      dg.rows() != m || (m > 0 && dg.cols() != n))
    throw std::invalid_argument("mma_step: size mismatch");
  if (!std::isfinite(F) || !x.allFinite() || !dF.allFinite() || !gval.allFinite() ||
      !dg.allFinite())
    throw std::invalid_argument("mma_step: non-finite input");

  const Eigen::ArrayXd range = (hi - lo).array().max(1e-5);
  Subproblem sp;
  if (st.iter < 2) {
    sp.low = x - (kAsyInit * range).matrix();
    sp.upp = x + (kAsyInit * range).matrix();
  } else {
    sp.low.resize(n);
    sp.upp.resize(n);
    for (int j = 0; j < n; ++j) {
      const double osc = (x[j] - st.xold1[j]) * (st.xold1[j] - st.xold2[j]);
      const double f = osc > 0.0 ? kAsyGrow : (osc < 0.0 ? kAsyShrink : 1.0);
      double l = x[j] - f * (st.xold1[j] - st.low[j]);
      double u = x[j] + f * (st.upp[j] - st.xold1[j]);
      // A small minimum spread keeps the stationary-point limit cycle well
      // below engineering tolerance while still shielding the division terms.
      l = std::min(std::max(l, x[j] - 10.0 * range[j]), x[j] - 1e-3 * range[j]);
      u = std::max(std::min(u, x[j] + 10.0 * range[j]), x[j] + 1e-3 * range[j]);
      sp.low[j] = l;
      sp.upp[j] = u;
    }
  }
  sp.alfa = lo.cwiseMax(sp.low + kAlbefa * (x - sp.low)).cwiseMax(x - st.move);
  sp.beta = hi.cwiseMin(sp.upp - kAlbefa * (sp.upp - x)).cwiseMin(x + st.move);
  sp.beta = sp.beta.cwiseMax(sp.alfa);

  const Eigen::ArrayXd ux2 = (sp.upp - x).array().square();
  const Eigen::ArrayXd xl2 = (x - sp.low).array().square();
  const Eigen::ArrayXd dfp = dF.array().max(0.0);
  const Eigen::ArrayXd dfm = (-dF.array()).max(0.0);
  const Eigen::ArrayXd mix0 = 0.001 * (dfp + dfm) + kRaa0 / range;
  sp.p0 = (ux2 * (dfp + mix0)).matrix();
  sp.q0 = (xl2 * (dfm + mix0)).matrix();
  sp.P.resize(m, n);
  sp.Q.resize(m, n);
  sp.b.resize(m);
  for (int i = 0; i < m; ++i) {
    const Eigen::ArrayXd gp = dg.row(i).transpose().array().max(0.0);
    const Eigen::ArrayXd gm = (-dg.row(i).transpose().array()).max(0.0);
    const Eigen::ArrayXd mix = 0.001 * (gp + gm) + kRaa0 / range;
    sp.P.row(i) = (ux2 * (gp + mix)).matrix();
    sp.Q.row(i) = (xl2 * (gm + mix)).matrix();
    sp.b[i] = (sp.P.row(i).transpose().array() / (sp.upp - x).array() +
               sp.Q.row(i).transpose().array() / (x - sp.low).array())
                  .sum() -
              gval[i];
  }

  if (st.lam.size() != m) st.lam = Eigen::VectorXd::Zero(m);
  st.lam = solve_dual(sp, st.lam, st.kkt_tol);
  st.relaxed = (st.lam.array() > kSlackC).any();
  const Eigen::VectorXd xnew = primal_minimizer(sp, st.lam);

  st.xold2 = st.xold1;
  st.xold1 = x;
  st.low = sp.low;
  st.upp = sp.upp;
  ++st.iter;
  return xnew;
}

double gray_level(const Evaluation& ev, const Mesh& mesh) {
  double sum = 0;
  int count = 0;
  for (int e = 0; e < mesh.num_elements(); ++e) {
    if (!mesh.active(e)) continue;
    const double r = ev.fields.rho_tilde[e];
    sum += 4.0 * r * (1.0 - r);
    ++count;
  }
  return count == 0 ? 0.0 : sum / count;
}

double membership_discreteness(const Evaluation& ev, const Mesh& mesh) {
  const int K = ev.fields.K;
  double sum = 0;
  int count = 0;
  for (int e = 0; e < mesh.num_elements(); ++e) {
    if (!mesh.active(e) || ev.fields.rho_tilde[e] <= 0.5) continue;
    double wmax = 0, wsum = 0;
    for (int k = 0; k < K; ++k) {
      const double w = ev.wdmo[static_cast<std::size_t>(e) * K + k];
      wmax = std::max(wmax, w);
      wsum += w;
    }
    sum += wsum > 0.0 ? 1.0 - wmax / wsum : 1.0;
    ++count;
  }
  return count == 0 ? 0.0 : sum / count;
}

namespace {

/// Shared driver for the full problem and the density-only reference path.
RunRecord drive(const Problem& pb, std::uint64_t seed, bool density_only) {
  const OptimizationConfig& opt = pb.opt;
  if (density_only && opt.K != 1)
    throw std::invalid_argument("reference density path requires K == 1");

  RunRecord rec;
  rec.seed = seed;
  DesignState state = initialize_state(pb.mesh, opt, seed);
  if (density_only)
    for (double& mk : state.memberships) mk = mk > 0.0 ? 1.0 : 0.0;

  const DesignVectorLayout full = DesignVectorLayout::create(pb.mesh, opt.K);
  const int n = density_only ? full.n_rho() : full.size();
  Eigen::VectorXd lo, hi;
  full.bounds(lo, hi);
  const Eigen::VectorXd move = full.move_limits(opt.move_limit, opt.move_limit_q);
  Eigen::VectorXd xfull = full.pack(state);
  Eigen::VectorXd x = xfull.head(n);

  MmaState mma = MmaState::create(n, move.head(n));
  Evaluator evaluator(pb);
  double beta = std::min(opt.beta0, opt.beta_max);
  int since_beta = 0;
  int streak = 0;
  double f_prev = 0;
  rec.status = RunStatus::MaxIterations;

  for (int it = 1; it <= opt.max_iter; ++it) {
    const auto t0 = std::chrono::steady_clock::now();
    Evaluation ev;
    try {
      ev = evaluator.evaluate(state, {beta, true});
    } catch (const std::runtime_error& ex) {
      rec.status = RunStatus::SolverFailure;
      rec.error = ex.what();
      break;
    }
    const SensitivityBundle sb = evaluator.sensitivities(ev);
    const bool stress_on = !density_only && it > opt.stress_start_iter;

    IterationRow row;
    row.iter = it;
    row.F = ev.F;
    row.g1 = ev.cons.g1;
    row.g2 = ev.cons.g2;
    row.max_interface_stress = ev.cons.max_interface_stress;
    row.gray = gray_level(ev, pb.mesh);
    row.membership_disc = membership_discreteness(ev, pb.mesh);
    row.beta = beta;

    const bool at_final_beta = beta >= opt.beta_max;
    if (at_final_beta && it > 1 &&
        std::abs(ev.F - f_prev) < opt.obj_tol * std::max(1.0, std::abs(ev.F)))
      ++streak;
    else
      streak = 0;
    f_prev = ev.F;

    const bool feasible_now =
        ev.cons.g1 <= kFeasTol && (!stress_on || ev.cons.g2 <= kFeasTol);

    const bool stop = streak >= kConvergeStreak;
    if (!stop && it < opt.max_iter) {
      const int mrows = stress_on ? 2 : 1;
      Eigen::VectorXd gval(mrows);
      Eigen::MatrixXd dgm(mrows, n);
      gval[0] = ev.cons.g1;
      dgm.row(0) = sb.dg1.head(n);
      if (stress_on) {
        gval[1] = ev.cons.g2;
        dgm.row(1) = sb.dg2.head(n);
      }
      x = mma_step(x, ev.F, sb.dF.head(n), gval, dgm, lo.head(n), hi.head(n), mma);
      xfull.head(n) = x;
      full.unpack(xfull, state);
      if (++since_beta >= opt.beta_period && beta < opt.beta_max && feasible_now) {
        beta = std::min(beta * opt.beta_factor, opt.beta_max);
        since_beta = 0;
        streak = 0;
      }
    }

    row.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    rec.history.push_back(row);
    if (stop) {
      rec.status = RunStatus::Converged;
      break;
    }
  }

  rec.final_state = state;
  if (!rec.history.empty()) {
    const IterationRow& last = rec.history.back();
    rec.feasible = rec.status != RunStatus::SolverFailure && last.g1 <= kFeasTol &&
                   last.g2 <= kFeasTol;
  }
  return rec;
}

}  // namespace

RunRecord run_optimization(const Problem& pb, std::uint64_t seed) {
  return drive(pb, seed, false);
}

RunRecord run_reference_simp(const Problem& pb, std::uint64_t seed) {
  return drive(pb, seed, true);
}

nlohmann::json RunRecord::to_json() const {
  nlohmann::json h = nlohmann::json::array();
  for (const IterationRow& r : history)
    h.push_back({{"iter", r.iter},
                 {"F", r.F},
                 {"g1", r.g1},
                 {"g2", r.g2},
                 {"max_interface_stress", r.max_interface_stress},
                 {"gray_level", r.gray},
                 {"membership_discreteness", r.membership_disc},
                 {"beta", r.beta},
                 {"wall_ms", r.wall_ms}});
  return {{"seed", seed},
          {"status", status_name(status)},
          {"feasible", feasible},
          {"error", error},
          {"iterations", history.size()},
          {"final_F", final_F()},
          {"history", h},
          {"final_state", final_state.to_json()}};
}

std::string convergence_csv(const RunRecord& rec) {
  std::string out =
      "iter,F,g1,g2,max_interface_stress,gray_level,membership_discreteness,beta\n";
  char buf[256];
  for (const IterationRow& r : rec.history) {
    std::snprintf(buf, sizeof buf, "%d,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n",
                  r.iter, r.F, r.g1, r.g2, r.max_interface_stress, r.gray,
                  r.membership_disc, r.beta);
    out += buf;
  }
  return out;
}

const RunRecord& MultiStartResult::best_record() const {
  if (best < 0) throw std::runtime_error("no successful optimization run");
  return records[static_cast<std::size_t>(best)];
}

MultiStartResult multi_start(const Problem& pb, int n_starts) {
  if (n_starts < 1) throw std::invalid_argument("n_starts must be >= 1");
  MultiStartResult res;
  res.records.resize(static_cast<std::size_t>(n_starts));
  const int workers = std::min(n_starts, thread_budget());
  std::atomic<int> next{0};
  auto work = [&] {
    for (int i = next.fetch_add(1); i < n_starts; i = next.fetch_add(1))
      res.records[static_cast<std::size_t>(i)] =
          run_optimization(pb, pb.opt.rng_seed + static_cast<std::uint64_t>(i));
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t) pool.emplace_back(work);
    for (std::thread& th : pool) th.join();
  }

  auto better = [](const RunRecord& a, const RunRecord& b) {
    if (a.feasible != b.feasible) return a.feasible;
    return a.final_F() < b.final_F();
  };
  for (int i = 0; i < n_starts; ++i) {
    const RunRecord& r = res.records[static_cast<std::size_t>(i)];
    if (r.status == RunStatus::SolverFailure || r.history.empty()) continue;
    if (res.best < 0 || better(r, res.records[static_cast<std::size_t>(res.best)]))
      res.best = i;
  }
  return res;
}

}  // namespace mto
