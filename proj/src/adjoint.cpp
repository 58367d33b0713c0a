#include "mto/adjoint.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mto {

namespace {

double resolved_radius(const Problem& pb) {
  return pb.opt.filter_radius < 0 ? 2.5 * pb.mesh.element_size : pb.opt.filter_radius;
}

HeavisideSpec projection_spec(const OptimizationConfig& opt, double beta) {
  return {beta, opt.eta, HeavisideVariant::Standard};
}

HeavisideSpec interface_spec(const OptimizationConfig& opt, double beta) {
  return {std::min(beta, 32.0), opt.eta_interface, HeavisideVariant::Shifted};
}

HeavisideSpec orientation_spec(double beta) {
  return {beta, 0.0, HeavisideVariant::Symmetric};
}

HeavisideSpec aggregation_spec(const OptimizationConfig& opt) {
  return {opt.beta_stress, 0.0, HeavisideVariant::Symmetric};
}

/// d(von Mises)/d(sigma) for a Voigt stress; zero when the magnitude
/// vanishes (the aggregate weight vanishes there too).
Eigen::VectorXd von_mises_gradient(const Eigen::VectorXd& sig, double vm, int dim) {
  Eigen::VectorXd n = Eigen::VectorXd::Zero(sig.size());
  if (vm <= 0) return n;
  if (dim == 2) {
    n[0] = (2.0 * sig[0] - sig[1]) / (2.0 * vm);
    n[1] = (2.0 * sig[1] - sig[0]) / (2.0 * vm);
    n[2] = 3.0 * sig[2] / vm;
  } else {
    n[0] = (2.0 * sig[0] - sig[1] - sig[2]) / (2.0 * vm);
    n[1] = (2.0 * sig[1] - sig[0] - sig[2]) / (2.0 * vm);
    n[2] = (2.0 * sig[2] - sig[0] - sig[1]) / (2.0 * vm);
    for (int i = 3; i < 6; ++i) n[i] = 3.0 * sig[i] / vm;
  }
  return n;
}

}  // namespace

/// Reverse-mode accumulators seeded by each functional before the shared
/// chain through DMO, interface, projection and filter.
struct Evaluator::Seeds {
  std::vector<double> ls;        // w.r.t. the SIMP scale s_e
  std::vector<double> lw;        // w.r.t. the DMO weights [e * K + k]
  std::vector<double> lI;        // w.r.t. the interface indicator I_e
  std::vector<double> lrho;      // direct w.r.t. rho_tilde_e
  std::vector<Eigen::MatrixXd> A;     // per component, element-dof outer products
  std::vector<Eigen::MatrixXd> Msig;  // per component, Voigt-space stress moments

  Seeds(int nel, int K, int ndof, int nv)
      : ls(nel, 0.0),
        lw(static_cast<std::size_t>(nel) * K, 0.0),
        lI(nel, 0.0),
        lrho(nel, 0.0),
        A(K, Eigen::MatrixXd::Zero(ndof, ndof)),
        Msig(K, Eigen::MatrixXd::Zero(nv, nv)) {}
};

Evaluator::Evaluator(const Problem& pb)
    : pb_(pb),
      layout_(DesignVectorLayout::create(pb.mesh, pb.opt.K)),
      filter_(pb.mesh, resolved_radius(pb)),
      sampler_(pb.mesh),
      cache_(pb.mesh.dim, pb.mesh.element_size),
      solver_(pb.mesh),
      Ct6_(transverse_from_engineering(pb.material)),
      Brot_(rotation_coefficients(Ct6_)),
      CJ_(joint_tensor(pb.joint, pb.mesh.dim)),
      KeJ_(cache_.element_matrix(CJ_.C)) {}

Evaluation Evaluator::evaluate(const DesignState& s, const EvalSettings& settings) {
  const Mesh& mesh = pb_.mesh;
  const OptimizationConfig& opt = pb_.opt;
  const int nel = mesh.num_elements();
  const int K = layout_.K;
  const int dim = mesh.dim;

  Evaluation ev;
  ev.settings = settings;
  ev.fields = compute_filtered_fields(s, mesh, filter_, sampler_, opt.simp_p,
                                      projection_spec(opt, settings.beta));
  ev.iface = interface_indicator(ev.fields, mesh, interface_spec(opt, settings.beta));

  ev.atens.resize(K);
  ev.ajac.resize(K);
  ev.C6r.resize(K);
  ev.Cvoigt.resize(K + 1);
  ev.Keref.resize(K + 1);
  const HeavisideSpec htilde = orientation_spec(settings.beta);
  for (int k = 0; k < K; ++k) {
    ev.atens[k] = assemble_orientation_jacobian(s.orientation_vars[k], htilde, dim, ev.ajac[k]);
    const StiffnessTensor rot = rotate_tensor(Brot_, ev.atens[k].a);
    ev.C6r[k] = rot.C;
    ev.Cvoigt[k] = dim == 2 ? Eigen::MatrixXd(plane_stress_reduce_mat(rot.C)) : rot.C;
    ev.Keref[k] = cache_.element_matrix(ev.Cvoigt[k]);
  }
  ev.Cvoigt[K] = CJ_.C;
  ev.Keref[K] = KeJ_;

  ev.wdmo.assign(static_cast<std::size_t>(nel) * K, 0.0);
  ev.Jdmo.assign(static_cast<std::size_t>(nel) * K * K, 0.0);
  ev.coef.assign(static_cast<std::size_t>(nel) * (K + 1), 0.0);
  ev.scoef.assign(static_cast<std::size_t>(nel) * (K + 1), 0.0);
  ev.relax.assign(nel, 0.0);
  for (int e = 0; e < nel; ++e) {
    if (!mesh.active(e)) {
      // Masked elements carry the void floor spread evenly over the
      // component tensors; no design variable reaches them.
      for (int k = 0; k < K; ++k)
        ev.coef[static_cast<std::size_t>(e) * (K + 1) + k] = kRhoMin / K;
      continue;
    }
    dmo_weights_jacobian({&ev.fields.m_tilde[static_cast<std::size_t>(e) * K], static_cast<std::size_t>(K)},
                         opt.simp_p, {&ev.wdmo[static_cast<std::size_t>(e) * K], static_cast<std::size_t>(K)},
                         {&ev.Jdmo[static_cast<std::size_t>(e) * K * K], static_cast<std::size_t>(K) * K});
    const double Ie = ev.iface.I[e];
    const double sc = simp_scale(ev.fields.rho_tilde[e], opt.simp_p);
    for (int k = 0; k < K; ++k) {
      const double w = ev.wdmo[static_cast<std::size_t>(e) * K + k];
      ev.coef[static_cast<std::size_t>(e) * (K + 1) + k] = sc * (1.0 - Ie) * w;
      ev.scoef[static_cast<std::size_t>(e) * (K + 1) + k] = (1.0 - Ie) * w;
    }
    ev.coef[static_cast<std::size_t>(e) * (K + 1) + K] = Ie;
    ev.scoef[static_cast<std::size_t>(e) * (K + 1) + K] = Ie;
    ev.relax[e] = std::sqrt(std::max(ev.fields.rho_tilde[e], 0.0));
  }

  solver_.factorize(ev.Keref, ev.coef);

  const int ncases = static_cast<int>(mesh.load_cases.size());
  ev.sol.u.resize(ncases);
  ev.sol.case_compliance.resize(ncases);
  if (static_cast<int>(u_prev_.size()) != ncases) u_prev_.assign(ncases, Eigen::VectorXd());
  for (int c = 0; c < ncases; ++c) {
    Eigen::VectorXd f = Eigen::VectorXd::Zero(mesh.num_dofs());
    for (const auto& [dof, val] : mesh.load_cases[c]) f[dof] += val;
    Eigen::VectorXd u =
        u_prev_[c].size() == f.size() ? solver_.solve(f, u_prev_[c]) : solver_.solve(f);
    ev.sol.case_compliance[c] = 0.5 * f.dot(u);
    ev.sol.compliance += ev.sol.case_compliance[c];
    u_prev_[c] = u;
    ev.sol.u[c] = std::move(u);
  }
  ev.F = ev.sol.compliance;
  ev.g1 = volume_constraint(ev.fields.rho_tilde, mesh, opt.vol_limit);

  if (settings.with_stress) {
    recover_stresses(mesh, cache_, ev.Cvoigt, ev.scoef, ev.relax, ev.sol);
    ev.cons = stress_constraint(ev.iface.I, ev.sol.von_mises, opt.sigma_bar, opt.eps_bar,
                                aggregation_spec(opt), mesh);
  }
  ev.cons.g1 = ev.g1;
  return ev;
}

void Evaluator::accumulate_stiffness_terms(double gamma, const Eigen::VectorXd& x,
                                           const Eigen::VectorXd& y, const Evaluation& ev,
                                           Seeds& sd) const {
  const Mesh& mesh = pb_.mesh;
  const int nel = mesh.num_elements();
  const int K = layout_.K;
  const int ndof = mesh.dofs_per_element();

  Eigen::VectorXd xe(ndof), ye(ndof);
  std::vector<double> Er(K + 1);
  for (int e = 0; e < nel; ++e) {
    if (!mesh.active(e)) continue;
    const auto dofs = mesh.element_dofs(e);
    for (int a = 0; a < ndof; ++a) {
      xe[a] = x[dofs[a]];
      ye[a] = y[dofs[a]];
    }
    for (int r = 0; r <= K; ++r) Er[r] = xe.dot(ev.Keref[r] * ye);
    const double Ie = ev.iface.I[e];
    const double sc = simp_scale(ev.fields.rho_tilde[e], pb_.opt.simp_p);
    double sw = 0;
    for (int k = 0; k < K; ++k) sw += ev.wdmo[static_cast<std::size_t>(e) * K + k] * Er[k];
    sd.ls[e] += gamma * (1.0 - Ie) * sw;
    for (int k = 0; k < K; ++k)
      sd.lw[static_cast<std::size_t>(e) * K + k] += gamma * sc * (1.0 - Ie) * Er[k];
    sd.lI[e] += gamma * (Er[K] - sc * sw);
    for (int k = 0; k < K; ++k) {
      const double ck = ev.coef[static_cast<std::size_t>(e) * (K + 1) + k];
      if (ck != 0.0) sd.A[k] += (gamma * ck) * (ye * xe.transpose());
    }
  }
}

Eigen::VectorXd Evaluator::chain_design_gradient(const Seeds& sd, const Evaluation& ev) const {
  const Mesh& mesh = pb_.mesh;
  const OptimizationConfig& opt = pb_.opt;
  const int nel = mesh.num_elements();
  const int K = layout_.K;
  const int dim = mesh.dim;
  const double p = opt.simp_p;
  const HeavisideSpec proj = projection_spec(opt, ev.settings.beta);
  const HeavisideSpec ispec = interface_spec(opt, ev.settings.beta);

  // Weight seeds fold onto the projected memberships through the DMO
  // Jacobian; the interface seed opens the gradient-pair chain.
  std::vector<double> lmt(static_cast<std::size_t>(nel) * K, 0.0);
  std::vector<double> lrt(sd.lrho);
  for (int e = 0; e < nel; ++e) {
    if (!mesh.active(e)) continue;
    for (int l = 0; l < K; ++l) {
      double acc = 0;
      for (int k = 0; k < K; ++k)
        acc += sd.lw[static_cast<std::size_t>(e) * K + k] *
               ev.Jdmo[static_cast<std::size_t>(e) * K * K + k * K + l];
      lmt[static_cast<std::size_t>(e) * K + l] += acc;
    }
    lrt[e] += sd.ls[e] * simp_scale_deriv(ev.fields.rho_tilde[e], p);
  }

  // Interface indicator: I = H(raw / ref) with raw the pair sum of squared
  // gradient norms of f_k = rho_tilde^p * m_tilde_k.
  std::vector<double> S(static_cast<std::size_t>(nel) * K, 0.0);
  std::vector<double> Ssum(nel, 0.0);
  for (int e = 0; e < nel; ++e)
    for (int k = 0; k < K; ++k) {
      double s2 = 0;
      for (int c = 0; c < dim; ++c) {
        const double g = ev.fields.grad_cache[(static_cast<std::size_t>(e) * K + k) * dim + c];
        s2 += g * g;
      }
      S[static_cast<std::size_t>(e) * K + k] = s2;
      Ssum[e] += s2;
    }
  std::vector<double> lraw(nel, 0.0);
  for (int e = 0; e < nel; ++e) {
    if (!mesh.active(e) || sd.lI[e] == 0.0) continue;
    lraw[e] = sd.lI[e] *
              smoothed_heaviside_deriv(ev.iface.raw[e] / ev.iface.reference, ispec) /
              ev.iface.reference;
  }
  std::vector<double> gbar(static_cast<std::size_t>(nel) * dim);
  for (int k = 0; k < K; ++k) {
    for (int e = 0; e < nel; ++e) {
      const double factor = lraw[e] * 2.0 * (Ssum[e] - S[static_cast<std::size_t>(e) * K + k]);
      for (int c = 0; c < dim; ++c)
        gbar[static_cast<std::size_t>(e) * dim + c] =
            factor * ev.fields.grad_cache[(static_cast<std::size_t>(e) * K + k) * dim + c];
    }
    const std::vector<double> lf = sampler_.apply_transpose(gbar);
    for (int e = 0; e < nel; ++e) {
      if (!mesh.active(e) || lf[e] == 0.0) continue;
      const double rt = ev.fields.rho_tilde[e];
      const double mt = ev.fields.m_tilde[static_cast<std::size_t>(e) * K + k];
      lrt[e] += lf[e] * p * std::pow(rt, p - 1.0) * mt;
      lmt[static_cast<std::size_t>(e) * K + k] += lf[e] * std::pow(rt, p);
    }
  }

  // Projection derivative, then the self-adjoint filter closes the chain.
  std::vector<double> lrho_raw(nel, 0.0);
  for (int e = 0; e < nel; ++e)
    if (mesh.active(e))
      lrho_raw[e] = lrt[e] * smoothed_heaviside_deriv(ev.fields.rho_filt[e], proj);
  const std::vector<double> drho = filter_.apply(lrho_raw);

  std::vector<std::vector<double>> dm(K);
  std::vector<double> lm_raw(nel);
  for (int k = 0; k < K; ++k) {
    for (int e = 0; e < nel; ++e)
      lm_raw[e] = mesh.active(e)
                      ? lmt[static_cast<std::size_t>(e) * K + k] *
                            smoothed_heaviside_deriv(
                                ev.fields.m_filt[static_cast<std::size_t>(e) * K + k], proj)
                      : 0.0;
    dm[k] = filter_.apply(lm_raw);
  }

  // Orientation gradients: contract the accumulated Voigt-space moments with
  // the directional derivative of the rotated tensor per q slot.
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(layout_.size());
  for (int k = 0; k < K; ++k) {
    Eigen::MatrixXd Mk = sd.Msig[k];
    if (!sd.A[k].isZero(0)) {
      for (int g = 0; g < cache_.num_gauss(); ++g)
        Mk += cache_.weight(g) * cache_.B(g) * sd.A[k] * cache_.B(g).transpose();
    }
    for (int sp = 0; sp < static_cast<int>(layout_.q_slots.size()); ++sp) {
      const int slot = layout_.q_slots[sp];
      const Mat6 dC6 = rotate_tensor_dir(Brot_, ev.atens[k].a, ev.ajac[k][slot]);
      const Eigen::MatrixXd dC =
          dim == 2 ? Eigen::MatrixXd(plane_stress_reduce_dir(ev.C6r[k], dC6)) : Eigen::MatrixXd(dC6);
      grad[layout_.q_index(k, sp)] = dC.cwiseProduct(Mk).sum();
    }
  }

  for (int a = 0; a < layout_.n_rho(); ++a) {
    const int e = layout_.active_elements[a];
    grad[a] = drho[e];
    for (int k = 0; k < K; ++k) grad[layout_.m_index(a, k)] = dm[k][e];
  }
  return grad;
}

SensitivityBundle Evaluator::sensitivities(const Evaluation& ev) {
  const Mesh& mesh = pb_.mesh;
  const OptimizationConfig& opt = pb_.opt;
  const int nel = mesh.num_elements();
  const int K = layout_.K;
  const int dim = mesh.dim;
  const int nv = dim == 3 ? 6 : 3;
  const int ndof = mesh.dofs_per_element();
  const int ncases = static_cast<int>(mesh.load_cases.size());
  const double ve = mesh.element_volume();

  SensitivityBundle out;

  {  // Volume: short chain, load-independent.
    Seeds sd(nel, K, ndof, nv);
    const double v0 = mesh.total_volume();
    for (int e = 0; e < nel; ++e)
      if (mesh.active(e)) sd.lrho[e] = ve / v0;
    out.dg1 = chain_design_gradient(sd, ev);
  }

  {  // Compliance: self-adjoint, pairs (u, u) with weight -1/2.
    Seeds sd(nel, K, ndof, nv);
    for (int c = 0; c < ncases; ++c)
      accumulate_stiffness_terms(-0.5, ev.sol.u[c], ev.sol.u[c], ev, sd);
    out.dF = chain_design_gradient(sd, ev);
  }

  if (!ev.settings.with_stress) {
    out.dg2 = Eigen::VectorXd::Zero(layout_.size());
    return out;
  }

  // Stress aggregate: explicit terms through the indicator, the relaxation
  // factor and the stress-strain chain, plus one adjoint solve per case.
  Seeds sd(nel, K, ndof, nv);
  const HeavisideSpec agg = aggregation_spec(opt);
  const double sb = opt.sigma_bar;
  if (static_cast<int>(adj_prev_.size()) != ncases) adj_prev_.assign(ncases, Eigen::VectorXd());
  Eigen::MatrixXd CS(nv, nv);
  for (int c = 0; c < ncases; ++c) {
    Eigen::VectorXd P = Eigen::VectorXd::Zero(mesh.num_dofs());
    for (int e = 0; e < nel; ++e) {
      if (!mesh.active(e)) continue;
      const double vm = ev.sol.von_mises[c][e];
      const double xarg = (vm - sb) / sb;
      const double Hs = smoothed_heaviside(xarg, agg);
      const double dHs = smoothed_heaviside_deriv(xarg, agg);
      const double rel2 = (vm / sb) * (vm / sb);
      sd.lI[e] += Hs * rel2 * ve;
      const double dPsi = dHs / sb * rel2 + Hs * 2.0 * vm / (sb * sb);
      const double base = ev.iface.I[e] * ve * dPsi;
      if (base == 0.0 || vm <= 0.0) continue;

      const Eigen::VectorXd sig = ev.sol.stress[c].row(e).transpose();
      const Eigen::VectorXd eps = ev.sol.strain[c].row(e).transpose();
      const Eigen::VectorXd n = von_mises_gradient(sig, vm, dim);
      CS.setZero();
      for (int r = 0; r <= K; ++r)
        CS += ev.scoef[static_cast<std::size_t>(e) * (K + 1) + r] * ev.Cvoigt[r];
      const Eigen::VectorXd CSe = CS * eps;
      const double rx = ev.relax[e];

      sd.lrho[e] += base * n.dot(CSe) * 0.5 / std::max(rx, 1e-12);
      double wterm = 0;
      for (int k = 0; k < K; ++k) {
        const double nCke = n.dot(ev.Cvoigt[k] * eps);
        const double wk = ev.wdmo[static_cast<std::size_t>(e) * K + k];
        sd.lw[static_cast<std::size_t>(e) * K + k] += base * rx * (1.0 - ev.iface.I[e]) * nCke;
        wterm += wk * nCke;
        sd.Msig[k] += (base * rx * (1.0 - ev.iface.I[e]) * wk) * (n * eps.transpose());
      }
      sd.lI[e] += base * rx * (n.dot(ev.Cvoigt[K] * eps) - wterm);

      const Eigen::VectorXd pe = (base * rx) * (cache_.centroid_B().transpose() * (CS * n));
      const auto dofs = mesh.element_dofs(e);
      for (int a = 0; a < ndof; ++a) P[dofs[a]] += pe[a];
    }
    if (P.isZero(0)) continue;
    Eigen::VectorXd lam = adj_prev_[c].size() == P.size() ? solver_.solve(P, adj_prev_[c])
                                                         : solver_.solve(P);
    adj_prev_[c] = lam;
    accumulate_stiffness_terms(-1.0, lam, ev.sol.u[c], ev, sd);
  }
  out.dg2 = chain_design_gradient(sd, ev);
  return out;
}

double fd_derivative(const Problem& pb, const DesignState& s, const EvalSettings& settings,
                     Functional which, int packed_index, double step) {
  if (!(step > 0)) throw std::domain_error("finite-difference step must be positive");
  if (which == Functional::StressAggregate && !settings.with_stress)
    throw std::invalid_argument("stress functional requires stress evaluation");
  const DesignVectorLayout layout =
      DesignVectorLayout::create(pb.mesh, static_cast<int>(s.orientation_vars.size()));
  Eigen::VectorXd x = layout.pack(s);
  if (packed_index < 0 || packed_index >= x.size())
    throw std::domain_error("design variable index out of range");
  Eigen::VectorXd lo, hi;
  layout.bounds(lo, hi);
  if (x[packed_index] - step < lo[packed_index] || x[packed_index] + step > hi[packed_index])
    throw std::domain_error("finite-difference sample not interior to its bounds");

  Evaluator evtor(pb);
  auto value = [&](double xv) {
    DesignState t = s;
    Eigen::VectorXd xt = x;
    xt[packed_index] = xv;
    layout.unpack(xt, t);
    const Evaluation e = evtor.evaluate(t, settings);
    switch (which) {
      case Functional::Compliance: return e.F;
      case Functional::Volume: return e.g1;
      case Functional::StressAggregate: return e.cons.g2;
    }
    return 0.0;
  };
  const double fp = value(x[packed_index] + step);
  const double fm = value(x[packed_index] - step);
  return (fp - fm) / (2.0 * step);
}

}  // namespace mto
